//! Tracking cost, backward adjoint sweep and reduced gradient.
//!
//! The adjoint of step `n` solves `J_n^T lambda_n = s_n - B_{n+1}^T lambda_{n+1}`
//! where `J_n` is the step Jacobian in the new level and `B_{n+1}` the
//! derivative of step `n+1` in its old level. Because it is the exact
//! transpose of the tangent recursion, the resulting gradient is the exact
//! gradient of the discrete reduced cost.

use serde::{Deserialize, Serialize};

use crate::control::ControlPair;
use crate::error::{Error, Result};
use crate::grid::{dot, ScalarField, SpaceTimeField, TimeGrid};
use crate::linalg::Factorized;
use crate::state::{simulate, simulate_factored, Model, StateSnapshot, Trajectory};
use crate::tangent::{LinearisedSnapshot, Linearization};

/// Weights of the six cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub alpha_omega: f64,
    pub alpha_q: f64,
    pub beta_omega: f64,
    pub beta_q: f64,
    pub alpha_u: f64,
    pub beta_v: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            alpha_omega: 1.0,
            alpha_q: 1.0,
            beta_omega: 0.0,
            beta_q: 0.0,
            alpha_u: 0.1,
            beta_v: 0.1,
        }
    }
}

impl CostWeights {
    fn all(&self) -> [f64; 6] {
        [
            self.alpha_omega,
            self.alpha_q,
            self.beta_omega,
            self.beta_q,
            self.alpha_u,
            self.beta_v,
        ]
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let names = [
            "alpha_omega",
            "alpha_q",
            "beta_omega",
            "beta_q",
            "alpha_u",
            "beta_v",
        ];
        for (n, w) in names.iter().zip(self.all()) {
            if !(w.is_finite() && w >= 0.0) {
                out.push(format!("C1: {n} >= 0 (got {w})"));
            }
        }
        if self.all().iter().all(|&w| w == 0.0) {
            out.push("C1: cost weights must not all vanish".to_string());
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            alpha_omega: s * self.alpha_omega,
            alpha_q: s * self.alpha_q,
            beta_omega: s * self.beta_omega,
            beta_q: s * self.beta_q,
            alpha_u: s * self.alpha_u,
            beta_v: s * self.beta_v,
        }
    }
}

/// Final-time and space-time targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetData {
    pub phi_omega: ScalarField,
    pub sigma_omega: ScalarField,
    pub phi_q: SpaceTimeField,
    pub sigma_q: SpaceTimeField,
}

impl TargetData {
    pub fn zeros(grid: &crate::grid::GridSpec, time: &TimeGrid) -> Self {
        Self {
            phi_omega: ScalarField::zeros(grid),
            sigma_omega: ScalarField::zeros(grid),
            phi_q: SpaceTimeField::zeros(grid, time),
            sigma_q: SpaceTimeField::zeros(grid, time),
        }
    }

    /// Targets that a given trajectory meets exactly.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let phis = traj.snapshots.iter().map(|s| s.phi.clone()).collect();
        let sigmas = traj.snapshots.iter().map(|s| s.sigma.clone()).collect();
        let last = traj.final_state();
        Ok(Self {
            phi_omega: last.phi.clone(),
            sigma_omega: last.sigma.clone(),
            phi_q: SpaceTimeField::new(phis)?,
            sigma_q: SpaceTimeField::new(sigmas)?,
        })
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        let g = traj.snapshots[0].grid();
        self.phi_omega.grid().check_same(g)?;
        self.sigma_omega.grid().check_same(g)?;
        for f in [&self.phi_q, &self.sigma_q] {
            f.grid().check_same(g)?;
            if f.node_count() != traj.snapshots.len() {
                return Err(Error::ShapeMismatch(format!(
                    "target has {} nodes, trajectory {}",
                    f.node_count(),
                    traj.snapshots.len()
                )));
            }
        }
        Ok(())
    }
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Reduced cost with right-endpoint rectangle rule in time.
pub fn cost(
    traj: &Trajectory,
    controls: &ControlPair,
    weights: &CostWeights,
    targets: &TargetData,
) -> Result<f64> {
    targets.check(traj)?;
    controls.check_against(traj.snapshots[0].grid(), &traj.time)?;
    let dt = traj.time.dt();
    let vol = traj.snapshots[0].grid().cell_volume();
    let w = weights;
    let mut running = 0.0;
    for k in 1..traj.snapshots.len() {
        let s = &traj.snapshots[k];
        let u = controls.u.node(k).values();
        let v = controls.v.node(k).values();
        running += w.alpha_q * sq_diff(s.phi.values(), targets.phi_q.node(k).values())
            + w.beta_q * sq_diff(s.sigma.values(), targets.sigma_q.node(k).values())
            + w.alpha_u * dot(u, u)
            + w.beta_v * dot(v, v);
    }
    let last = traj.final_state();
    let terminal = w.alpha_omega * sq_diff(last.phi.values(), targets.phi_omega.values())
        + w.beta_omega * sq_diff(last.sigma.values(), targets.sigma_omega.values());
    Ok(0.5 * vol * (dt * running + terminal))
}

/// Adjoint `(p, q, r)` at one time level; `p + tau q` carries the final
/// condition `alpha_Omega (phi(T) - phi_Omega)` in the limit `dt -> 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSnapshot {
    pub p: ScalarField,
    pub q: ScalarField,
    pub r: ScalarField,
}

/// Adjoint states at `t_1, ..., t_N` (index `n - 1` holds level `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub snapshots: Vec<AdjointSnapshot>,
    multipliers: Vec<Vec<f64>>,
}

impl AdjointTrajectory {
    /// Raw multipliers of the step equations (stacked `phi, mu, sigma` rows).
    pub fn multipliers(&self) -> &[Vec<f64>] {
        &self.multipliers
    }
}

impl Linearization<'_> {
    /// Backward sweep with arbitrary seeds: `seeds[n-1]` is the derivative
    /// of a linear functional with respect to the stacked state at level `n`.
    pub fn adjoint_sweep(&self, seeds: &[Vec<f64>]) -> Result<AdjointTrajectory> {
        let steps = self.steps.len();
        let g = self.model.grid();
        let n = g.len();
        if seeds.len() != steps || seeds.iter().any(|s| s.len() != 3 * n) {
            return Err(Error::ShapeMismatch(
                "adjoint seeds must cover every level".into(),
            ));
        }
        let dt = self.base.time.dt();
        let mut lambda: Vec<Vec<f64>> = vec![Vec::new(); steps];
        for k in (0..steps).rev() {
            let mut rhs = seeds[k].clone();
            if k + 1 < steps {
                let (bphi, bsig) = self.steps[k + 1].coupling_transpose(
                    self.model,
                    &lambda[k + 1],
                    self.controls.u.node(k + 2).values(),
                );
                for i in 0..n {
                    rhs[i] -= bphi[i];
                    rhs[2 * n + i] -= bsig[i];
                }
            }
            lambda[k] = self.steps[k].lu.solve_transpose(&rhs)?;
        }
        let snapshots = lambda
            .iter()
            .map(|l| {
                let s = StateSnapshot::from_stacked(g, l);
                AdjointSnapshot {
                    p: s.phi,
                    q: s.mu.scaled(-1.0 / dt),
                    r: s.sigma,
                }
            })
            .collect();
        Ok(AdjointTrajectory {
            snapshots,
            multipliers: lambda,
        })
    }

    /// Pairs a control perturbation with an adjoint obtained from
    /// [`adjoint_sweep`](Self::adjoint_sweep): `sum_n lambda_n . (-C_n (h, k)_n)`,
    /// which equals `sum_n seeds_n . tangent_n`.
    pub fn control_pairing(&self, adj: &AdjointTrajectory, dir: &ControlPair) -> f64 {
        let n = self.model.grid().len();
        let dt = self.base.time.dt();
        let mut s = 0.0;
        for (k, l) in adj.multipliers.iter().enumerate() {
            let phi_old = self.base.snapshots[k].phi.values();
            let h = dir.u.node(k + 1).values();
            let kk = dir.v.node(k + 1).values();
            for i in 0..n {
                let hh = self.model.params.distribution.value(phi_old[i]);
                s += -dt * hh * h[i] * l[i] + dt * kk[i] * l[2 * n + i];
            }
        }
        s
    }

    /// Adjoint of the tracking cost.
    pub fn adjoint_solve(
        &self,
        weights: &CostWeights,
        targets: &TargetData,
    ) -> Result<AdjointTrajectory> {
        targets.check(self.base)?;
        let n = self.model.grid().len();
        let steps = self.steps.len();
        let dt = self.base.time.dt();
        let w = weights;
        let seeds = (1..=steps)
            .map(|k| {
                let s = &self.base.snapshots[k];
                let mut seed = vec![0.0; 3 * n];
                let (phi, sig) = (s.phi.values(), s.sigma.values());
                let (pq, sq) = (
                    targets.phi_q.node(k).values(),
                    targets.sigma_q.node(k).values(),
                );
                for i in 0..n {
                    seed[i] = dt * w.alpha_q * (phi[i] - pq[i]);
                    seed[2 * n + i] = dt * w.beta_q * (sig[i] - sq[i]);
                }
                if k == steps {
                    let (po, so) = (targets.phi_omega.values(), targets.sigma_omega.values());
                    for i in 0..n {
                        seed[i] += w.alpha_omega * (phi[i] - po[i]);
                        seed[2 * n + i] += w.beta_omega * (sig[i] - so[i]);
                    }
                }
                seed
            })
            .collect::<Vec<_>>();
        self.adjoint_sweep(&seeds)
    }

    /// `g_u = alpha_u u - h(phi) p`, `g_v = beta_v v + r` on the control
    /// nodes; node 0 mirrors node 1 like the controls themselves.
    pub fn reduced_gradient(&self, adj: &AdjointTrajectory, weights: &CostWeights) -> ControlPair {
        let g = self.model.grid();
        let mut gu = Vec::with_capacity(adj.snapshots.len() + 1);
        let mut gv = Vec::with_capacity(adj.snapshots.len() + 1);
        for (k, a) in adj.snapshots.iter().enumerate() {
            let phi_old = &self.base.snapshots[k].phi;
            let dist = &self.model.params.distribution;
            let u = self.controls.u.node(k + 1);
            let v = self.controls.v.node(k + 1);
            let hp = phi_old.zip_map(&a.p, move |ph, p| dist.value(ph) * p);
            gu.push(u.scaled(weights.alpha_u).zip_map(&hp, |x, y| x - y));
            gv.push(v.scaled(weights.beta_v).zip_map(&a.r, |x, y| x + y));
        }
        let first_u = gu.first().cloned().unwrap_or_else(|| ScalarField::zeros(g));
        let first_v = gv.first().cloned().unwrap_or_else(|| ScalarField::zeros(g));
        gu.insert(0, first_u);
        gv.insert(0, first_v);
        ControlPair {
            u: SpaceTimeField::new(gu).expect("nonempty"),
            v: SpaceTimeField::new(gv).expect("nonempty"),
        }
    }
}

/// `sum_n seeds_n . tangent_n` over the stacked state.
pub fn seed_pairing(seeds: &[Vec<f64>], tangent: &[LinearisedSnapshot]) -> f64 {
    seeds
        .iter()
        .zip(&tangent[1..])
        .map(|(s, t)| {
            let n = t.xi.len();
            dot(&s[..n], t.xi.values())
                + dot(&s[n..2 * n], t.eta.values())
                + dot(&s[2 * n..], t.rho.values())
        })
        .sum()
}

/// The reduced problem `j(u, v) = J(S(u, v), u, v)`.
pub struct ReducedProblem<'a> {
    pub model: &'a Model,
    pub phi0: &'a ScalarField,
    pub sigma0: &'a ScalarField,
    pub time: TimeGrid,
    pub weights: CostWeights,
    pub targets: &'a TargetData,
}

/// Result of a forward solve, ready for an adjoint sweep.
pub struct Forward {
    pub cost: f64,
    pub trajectory: Trajectory,
    factors: Vec<Factorized>,
}

/// Cost, gradient and the trajectories behind them.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    pub gradient: ControlPair,
    pub trajectory: Trajectory,
    pub adjoint: AdjointTrajectory,
}

impl ReducedProblem<'_> {
    pub fn cost(&self, controls: &ControlPair) -> Result<f64> {
        let traj = simulate(self.model, self.phi0, self.sigma0, controls, &self.time)?;
        cost(&traj, controls, &self.weights, self.targets)
    }

    /// Forward solve keeping the step factorisations for a later gradient.
    pub fn forward(&self, controls: &ControlPair) -> Result<Forward> {
        let (trajectory, factors) =
            simulate_factored(self.model, self.phi0, self.sigma0, controls, &self.time)?;
        let cost = cost(&trajectory, controls, &self.weights, self.targets)?;
        Ok(Forward {
            cost,
            trajectory,
            factors,
        })
    }

    pub fn evaluate(&self, controls: &ControlPair) -> Result<Evaluation> {
        let fwd = self.forward(controls)?;
        self.complete(controls, fwd)
    }

    /// Adjoint solve and gradient on top of `fwd`, which must come from
    /// [`Self::forward`] at the same controls.
    pub fn complete(&self, controls: &ControlPair, fwd: Forward) -> Result<Evaluation> {
        let Forward {
            cost: j,
            trajectory: traj,
            factors,
        } = fwd;
        let lin = Linearization::from_factors(self.model, &traj, controls, factors)?;
        let adjoint = lin.adjoint_solve(&self.weights, self.targets)?;
        let gradient = lin.reduced_gradient(&adjoint, &self.weights);
        drop(lin);
        Ok(Evaluation {
            cost: j,
            gradient,
            trajectory: traj,
            adjoint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::kernel::{KernelSpec, KernelTable};
    use crate::model::ModelParams;
    use crate::potential::PotentialSpec;

    #[test]
    fn control_cost_of_constant() {
        let g = GridSpec::line(1.0, 10).unwrap();
        let t = TimeGrid::new(1.0, 5).unwrap();
        let kernel = KernelTable::build(KernelSpec::Constant { value: 1.0 }, &g).unwrap();
        let m = Model::new(
            ModelParams::default(),
            PotentialSpec::RegularQuartic,
            kernel,
        )
        .unwrap();
        let c = ControlPair::constant(&g, &t, 0.7, 0.0);
        let tr = simulate(
            &m,
            &ScalarField::constant(&g, 0.1),
            &ScalarField::zeros(&g),
            &c,
            &t,
        )
        .unwrap();
        let w = CostWeights {
            alpha_omega: 0.0,
            alpha_q: 0.0,
            beta_omega: 0.0,
            beta_q: 0.0,
            alpha_u: 1.0,
            beta_v: 0.0,
        };
        let j = cost(&tr, &c, &w, &TargetData::zeros(&g, &t)).unwrap();
        assert!((j - 0.49 / 2.0).abs() <= 1e-14);
        let tgt = TargetData::from_trajectory(&tr).unwrap();
        let zero = ControlPair::zeros(&g, &t);
        let w2 = CostWeights {
            alpha_u: 0.0,
            ..CostWeights::default()
        };
        let tr0 = simulate(
            &m,
            &ScalarField::constant(&g, 0.1),
            &ScalarField::zeros(&g),
            &zero,
            &t,
        )
        .unwrap();
        let tgt0 = TargetData::from_trajectory(&tr0).unwrap();
        assert_eq!(cost(&tr0, &zero, &w2, &tgt0).unwrap(), 0.0);
        let j1 = cost(&tr, &c, &CostWeights::default(), &tgt).unwrap();
        let j2 = cost(&tr, &c, &CostWeights::default().scaled(2.0), &tgt).unwrap();
        assert!((j2 - 2.0 * j1).abs() <= 1e-15 * j2.abs());
    }

    #[test]
    fn weight_validation() {
        assert!(CostWeights::default().violations().is_empty());
        assert!(!CostWeights::default().scaled(0.0).violations().is_empty());
        let w = CostWeights {
            alpha_q: -1.0,
            ..CostWeights::default()
        };
        assert!(w.violations()[0].starts_with("C1"));
    }
}
