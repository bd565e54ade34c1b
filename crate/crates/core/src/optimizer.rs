//! Projected gradient descent on the reduced cost and gradient checks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{Evaluation, ReducedProblem};
use crate::control::{AdmissibleSet, ControlPair};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, SpaceTimeField, TimeGrid};
use crate::par::{self, Execution};
use crate::projection::{project_u, project_v, ProjectionConfig, ProjectionMethod};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    pub stationarity_tol: f64,
    /// Use Barzilai-Borwein trial steps after the first iteration.
    pub barzilai_borwein: bool,
    pub projection: ProjectionMethod,
    pub dykstra_sweeps: usize,
    pub dykstra_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 40,
            stationarity_tol: 1e-6,
            barzilai_borwein: true,
            projection: ProjectionMethod::Exact,
            dykstra_sweeps: 5000,
            dykstra_tol: 1e-12,
        }
    }
}

impl OptimizerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            out.push(format!(
                "optimizer: shrink must lie in (0,1) (got {})",
                self.shrink
            ));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            out.push(format!(
                "optimizer: sufficient_decrease must lie in (0,1) (got {})",
                self.sufficient_decrease
            ));
        }
        for (name, v) in [
            ("initial_step", self.initial_step),
            ("stationarity_tol", self.stationarity_tol),
            ("dykstra_tol", self.dykstra_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("optimizer: {name} must be positive (got {v})"));
            }
        }
        if self.dykstra_sweeps == 0 || self.max_backtracks == 0 {
            out.push("optimizer: sweep and backtrack limits must be positive".to_string());
        }
        out
    }

    pub fn projection(&self) -> ProjectionConfig {
        ProjectionConfig {
            method: self.projection,
            max_sweeps: self.dykstra_sweeps,
            tol: self.dykstra_tol,
        }
    }
}

/// One optimizer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    /// `|x - P(x - g)|` in `L2(Q_T)^2`.
    pub stationarity: f64,
    /// Step accepted after this record's point (0 for the last one).
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub controls: ControlPair,
    pub history: Vec<IterationRecord>,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Cost, gradient and trajectories at the returned controls.
    pub evaluation: Evaluation,
}

/// Projection onto `U_ad x V_ad`.
pub fn project_controls(
    c: &ControlPair,
    set: &AdmissibleSet,
    dt: f64,
    cfg: &ProjectionConfig,
) -> Result<ControlPair> {
    Ok(ControlPair {
        u: project_u(&c.u, set, dt, cfg)?,
        v: project_v(&c.v, &set.v_min, &set.v_max)?,
    })
}

fn stationarity(
    x: &ControlPair,
    g: &ControlPair,
    set: &AdmissibleSet,
    dt: f64,
    cfg: &ProjectionConfig,
) -> Result<f64> {
    let p = project_controls(&x.axpy(-1.0, g), set, dt, cfg)?;
    Ok(x.axpy(-1.0, &p).norm(dt))
}

/// Projected gradient with Armijo backtracking along the projection arc.
pub fn optimize(
    problem: &ReducedProblem<'_>,
    initial: &ControlPair,
    set: &AdmissibleSet,
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult> {
    let bad = cfg.violations();
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    let dt = problem.time.dt();
    let proj = cfg.projection();
    let mut x = project_controls(initial, set, dt, &proj)?;
    let mut eval = problem.evaluate(&x)?;
    let mut history = Vec::new();
    let mut prev: Option<(ControlPair, ControlPair)> = None;
    for it in 0..=cfg.max_iters {
        let stat = stationarity(&x, &eval.gradient, set, dt, &proj)?;
        log::info!("iter={it} J={:.12e} stationarity={stat:.3e}", eval.cost);
        if stat <= cfg.stationarity_tol || it == cfg.max_iters {
            history.push(IterationRecord {
                iteration: it,
                cost: eval.cost,
                stationarity: stat,
                step: 0.0,
            });
            let converged = stat <= cfg.stationarity_tol;
            return Ok(OptimizeResult {
                controls: x,
                history,
                kkt_residual: stat,
                converged,
                evaluation: eval,
            });
        }
        let mut s = cfg.initial_step;
        if cfg.barzilai_borwein {
            if let Some((px, pg)) = &prev {
                let dx = x.axpy(-1.0, px);
                let dg = eval.gradient.axpy(-1.0, pg);
                let sy = dx.inner(&dg, dt);
                if sy > 0.0 {
                    s = (dx.inner(&dx, dt) / sy).clamp(1e-8, 1e8);
                }
            }
        }
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let trial = project_controls(&x.axpy(-s, &eval.gradient), set, dt, &proj)?;
            let decrease = eval.gradient.inner(&x.axpy(-1.0, &trial), dt);
            match problem.forward(&trial) {
                Ok(f)
                    if f.cost <= eval.cost - cfg.sufficient_decrease * decrease
                        && f.cost <= eval.cost =>
                {
                    accepted = Some((trial, f));
                    break;
                }
                Ok(_) => {}
                Err(e) => log::debug!("line search probe at step {s:.3e} failed: {e}"),
            }
            s *= cfg.shrink;
        }
        let (trial, fwd) = accepted.ok_or(Error::LineSearch(it))?;
        history.push(IterationRecord {
            iteration: it,
            cost: eval.cost,
            stationarity: stat,
            step: s,
        });
        let next = problem.complete(&trial, fwd)?;
        prev = Some((
            std::mem::replace(&mut x, trial),
            std::mem::replace(&mut eval, next).gradient,
        ));
    }
    unreachable!("loop returns on its last iteration")
}

/// Uniform random element of the box, then projected onto `U_ad x V_ad`.
pub fn random_feasible(
    set: &AdmissibleSet,
    dt: f64,
    cfg: &ProjectionConfig,
    seed: u64,
) -> Result<ControlPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: &SpaceTimeField, hi: &SpaceTimeField| -> SpaceTimeField {
        let nodes = lo
            .nodes()
            .iter()
            .zip(hi.nodes())
            .map(|(l, h)| {
                let v = l
                    .values()
                    .iter()
                    .zip(h.values())
                    .map(|(&a, &b)| if b > a { rng.gen_range(a..=b) } else { a })
                    .collect();
                ScalarField::from_values(l.grid(), v).expect("same grid")
            })
            .collect();
        SpaceTimeField::new(nodes).expect("nonempty")
    };
    let u = draw(&set.u_min, &set.u_max);
    let v = draw(&set.v_min, &set.v_max);
    project_controls(&ControlPair::new(u, v)?, set, dt, cfg)
}

/// Smooth random perturbation direction: low cosine modes in space and
/// time with coefficients uniform in `[-1, 1]`, damped by mode number.
pub fn random_direction(grid: &GridSpec, time: &TimeGrid, seed: u64) -> ControlPair {
    const MODES: usize = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = grid.extent();
    let ky_max = if grid.dim() == 2 { MODES } else { 1 };
    let mut field = || {
        let mut coef = Vec::new();
        for kx in 0..MODES {
            for ky in 0..ky_max {
                for j in 0..MODES {
                    let c: f64 = rng.gen_range(-1.0..=1.0);
                    coef.push((kx, ky, j, c / (1 + kx + ky + j) as f64));
                }
            }
        }
        let mut f = SpaceTimeField::from_fn(grid, time, |x, t| {
            coef.iter()
                .map(|&(kx, ky, j, c)| {
                    c * (kx as f64 * PI * x[0] / ext[0]).cos()
                        * (ky as f64 * PI * x[1] / ext[1]).cos()
                        * (j as f64 * PI * t / time.horizon()).cos()
                })
                .sum()
        });
        f.tie_initial_node();
        f
    };
    let u = field();
    let v = field();
    ControlPair::new(u, v).expect("finite")
}

/// Minimum over sampled feasible `c` of `(g, c - x)`; nonnegative at a
/// stationary point.
pub fn sampled_variational_inequality(
    x: &ControlPair,
    gradient: &ControlPair,
    set: &AdmissibleSet,
    dt: f64,
    cfg: &ProjectionConfig,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    let seeds: Vec<u64> = (0..samples as u64).map(|k| seed.wrapping_add(k)).collect();
    let vals = par::map_jobs(&seeds, exec, |&s| {
        random_feasible(set, dt, cfg, s).map(|c| gradient.inner(&c.axpy(-1.0, x), dt))
    });
    vals.into_iter()
        .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v)))
}

/// Central-difference check of the adjoint gradient along one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// `(g, d)` from the adjoint gradient.
    pub adjoint_derivative: f64,
    pub eps: Vec<f64>,
    pub fd_derivative: Vec<f64>,
    pub relative_error: Vec<f64>,
}

impl FdReport {
    pub fn best_relative_error(&self) -> f64 {
        self.relative_error
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Error at the smallest step of the ladder.
    pub fn error_at_min_eps(&self) -> f64 {
        let k = (0..self.eps.len())
            .min_by(|&a, &b| self.eps[a].total_cmp(&self.eps[b]))
            .expect("nonempty ladder");
        self.relative_error[k]
    }
}

pub fn fd_gradient_oracle(
    problem: &ReducedProblem<'_>,
    controls: &ControlPair,
    gradient: &ControlPair,
    direction: &ControlPair,
    eps: &[f64],
    exec: Execution,
) -> Result<FdReport> {
    let dt = problem.time.dt();
    if !(direction.norm(dt) > 0.0) {
        return Err(Error::InvalidArgument(
            "gradient check direction must be nonzero".into(),
        ));
    }
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument(
            "step ladder must be nonempty and positive".into(),
        ));
    }
    let ad = gradient.inner(direction, dt);
    let probes: Vec<f64> = eps.iter().flat_map(|&e| [e, -e]).collect();
    let costs = par::map_jobs(&probes, exec, |&e| {
        problem.cost(&controls.axpy(e, direction))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let fd: Vec<f64> = eps
        .iter()
        .enumerate()
        .map(|(k, e)| (costs[2 * k] - costs[2 * k + 1]) / (2.0 * e))
        .collect();
    let scale = ad.abs().max(f64::MIN_POSITIVE);
    let rel = fd.iter().map(|f| (f - ad).abs() / scale).collect();
    Ok(FdReport {
        adjoint_derivative: ad,
        eps: eps.to_vec(),
        fd_derivative: fd,
        relative_error: rel,
    })
}
