//! Forward time integration of the state system with mass, energy and
//! separation monitors.
//!
//! One step `n -> n+1` solves, for `(phi', mu', sigma')`,
//!
//! ```text
//! phi' - phi - dt m L mu' - dt P w' + dt h u'                        = dt f_phi
//! mu' - tau (phi' - phi)/dt - A F1'(phi') - A F2'(phi) - B a phi'
//!     + B (J * phi) + chi sigma'                                      = f_mu
//! sigma' - sigma - dt n L sigma' + dt n chi L phi' + dt P w' - dt v'  = dt f_sigma
//! ```
//!
//! with `w' = sigma' + chi (1 - phi') - mu'`, `L` the Neumann Laplacian and
//! `P = P(phi)`, `h = h(phi)`, `J * phi` taken at the old level. The
//! proliferation terms cancel in the sum of the first and last rows, which
//! makes the discrete mass balance exact.

use crate::control::ControlPair;
use crate::error::{Error, Result};
use crate::grid::{dot, h1_seminorm_sq, GridSpec, ScalarField, TimeGrid};
use crate::kernel::KernelTable;
use crate::linalg::{
    conjugate_gradient, Backend, CsrMatrix, Factorized, SymbolicCache, TripletBuilder,
};
use crate::model::ModelParams;
use crate::par::{self, Execution};
use crate::potential::PotentialSpec;

/// Newton settings for the implicit step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub max_iter: usize,
    /// Bound on the sup-norm of the (dt-scaled) residual.
    pub tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: 1e-11,
        }
    }
}

/// Everything that stays fixed across a simulation.
#[derive(Debug)]
pub struct Model {
    pub params: ModelParams,
    pub potential: PotentialSpec,
    pub kernel: KernelTable,
    pub newton: NewtonConfig,
    lu_cache: SymbolicCache,
}

impl Model {
    pub fn new(params: ModelParams, potential: PotentialSpec, kernel: KernelTable) -> Result<Self> {
        let mut v = params.violations();
        if let Err(e) = potential.validate() {
            v.push(e);
        }
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        Ok(Self {
            params,
            potential,
            kernel,
            newton: NewtonConfig::default(),
            lu_cache: SymbolicCache::new(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.kernel.grid()
    }

    pub(crate) fn backend(&self) -> Backend {
        Backend::for_cells(self.grid().len())
    }

    /// Factorises a step Jacobian; all of them share one sparsity pattern.
    pub(crate) fn factorize(&self, jac: &CsrMatrix) -> Result<Factorized> {
        Factorized::with_cache(jac, self.backend(), Some(&self.lu_cache))
    }
}

/// `(phi, mu, sigma)` at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub phi: ScalarField,
    pub mu: ScalarField,
    pub sigma: ScalarField,
}

impl StateSnapshot {
    pub fn new(phi: ScalarField, mu: ScalarField, sigma: ScalarField) -> Result<Self> {
        phi.grid().check_same(mu.grid())?;
        phi.grid().check_same(sigma.grid())?;
        let s = Self { phi, mu, sigma };
        if !s.is_finite() {
            return Err(Error::NonFinite("state".into()));
        }
        Ok(s)
    }

    pub fn grid(&self) -> &GridSpec {
        self.phi.grid()
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.mu.is_finite() && self.sigma.is_finite()
    }

    /// `int (phi + sigma)`.
    pub fn mass(&self) -> f64 {
        self.phi.integral() + self.sigma.integral()
    }

    pub(crate) fn stacked(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(3 * self.phi.len());
        y.extend_from_slice(self.phi.values());
        y.extend_from_slice(self.mu.values());
        y.extend_from_slice(self.sigma.values());
        y
    }

    pub(crate) fn from_stacked(grid: &GridSpec, y: &[f64]) -> Self {
        let n = grid.len();
        Self {
            phi: ScalarField::from_raw(*grid, y[..n].to_vec()),
            mu: ScalarField::from_raw(*grid, y[n..2 * n].to_vec()),
            sigma: ScalarField::from_raw(*grid, y[2 * n..].to_vec()),
        }
    }
}

/// Extra volume sources added to the three rows of a step (used to
/// manufacture exact solutions).
#[derive(Debug, Clone, PartialEq)]
pub struct StepForcing {
    pub phi: ScalarField,
    pub mu: ScalarField,
    pub sigma: ScalarField,
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Per-node records kept along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monitor {
    pub time: f64,
    /// `int (phi + sigma)`.
    pub mass: f64,
    /// Cumulative `sum dt int (-h(phi) u + v)` up to this node.
    pub mass_ledger: f64,
    /// `mass - mass_0 - mass_ledger`.
    pub mass_defect: f64,
    pub energy: f64,
    pub max_abs_phi: f64,
    pub newton_iterations: usize,
}

/// Snapshots at `t_0, ..., t_N` with their monitors.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub time: TimeGrid,
    pub snapshots: Vec<StateSnapshot>,
    pub monitors: Vec<Monitor>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateSnapshot {
        self.snapshots
            .last()
            .expect("trajectory has at least one snapshot")
    }

    /// `sqrt(sum_{n>=1} dt (|dphi|^2 + |dmu|^2 + |dsigma|^2))`.
    pub fn distance(&self, other: &Trajectory) -> f64 {
        let dt = self.time.dt();
        let vol = self.snapshots[0].grid().cell_volume();
        let mut s = 0.0;
        for (a, b) in self.snapshots.iter().zip(&other.snapshots).skip(1) {
            for (x, y) in [(&a.phi, &b.phi), (&a.mu, &b.mu), (&a.sigma, &b.sigma)] {
                s += x
                    .values()
                    .iter()
                    .zip(y.values())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>();
            }
        }
        (s * vol * dt).sqrt()
    }
}

pub(crate) fn laplacian(grid: &GridSpec, f: &[f64]) -> Vec<f64> {
    par::map_range(f.len(), |i| {
        grid.neighbors(i).map(|(j, w)| w * (f[j] - f[i])).sum()
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, a| m.max(a.abs()))
}

fn check_separated(potential: &PotentialSpec, phi: &ScalarField, step: usize) -> Result<()> {
    let l = potential.half_width();
    let m = phi.max_abs();
    if !m.is_finite() {
        return Err(Error::NonFinite(format!("phi at step {step}")));
    }
    if m >= l {
        return Err(Error::SeparationBreach {
            step,
            max_abs: m,
            half_width: l,
        });
    }
    Ok(())
}

/// Data frozen at the old time level.
pub(crate) struct Lagged {
    pub p: Vec<f64>,
    pub dp: Vec<f64>,
    pub h: Vec<f64>,
    pub dh: Vec<f64>,
    pub conv: Vec<f64>,
    pub f2p: Vec<f64>,
    pub f2pp: Vec<f64>,
}

impl Lagged {
    pub fn new(model: &Model, phi: &ScalarField) -> Self {
        let prm = &model.params;
        let pot = &model.potential;
        let v = phi.values();
        Self {
            p: v.iter().map(|&s| prm.proliferation.value(s)).collect(),
            dp: v.iter().map(|&s| prm.proliferation.derivative(s)).collect(),
            h: v.iter().map(|&s| prm.distribution.value(s)).collect(),
            dh: v.iter().map(|&s| prm.distribution.derivative(s)).collect(),
            conv: model.kernel.convolve_unchecked(phi).into_values(),
            f2p: v.iter().map(|&s| pot.f2(1, s)).collect(),
            f2pp: v.iter().map(|&s| pot.f2(2, s)).collect(),
        }
    }
}

/// Jacobian of the step residual with respect to the new level. Depends
/// only on `P(phi_old)` and `F1''(phi_new)`.
pub(crate) fn step_jacobian(model: &Model, p_old: &[f64], phi_new: &[f64], dt: f64) -> CsrMatrix {
    let grid = model.grid();
    let prm = &model.params;
    let a = model.kernel.a_field().values();
    let n = grid.len();
    let (im, is) = (n, 2 * n);
    let mut t = TripletBuilder::with_capacity(3 * n, 17 * n);
    for i in 0..n {
        let p = p_old[i];
        let mut wsum = 0.0;
        for (j, w) in grid.neighbors(i) {
            wsum += w;
            t.push(i, im + j, -dt * prm.m * w);
            t.push(is + i, j, dt * prm.n * prm.chi * w);
            t.push(is + i, is + j, -dt * prm.n * w);
        }
        t.push(i, i, 1.0 + dt * p * prm.chi);
        t.push(i, im + i, dt * p + dt * prm.m * wsum);
        t.push(i, is + i, -dt * p);

        let f1pp = model.potential.f1(2, phi_new[i]);
        t.push(im + i, i, -prm.tau / dt - prm.a * f1pp - prm.b * a[i]);
        t.push(im + i, im + i, 1.0);
        t.push(im + i, is + i, prm.chi);

        t.push(is + i, i, -dt * p * prm.chi - dt * prm.n * prm.chi * wsum);
        t.push(is + i, im + i, -dt * p);
        t.push(is + i, is + i, 1.0 + dt * p + dt * prm.n * wsum);
    }
    t.to_csr()
}

struct StepProblem<'a> {
    model: &'a Model,
    old: &'a StateSnapshot,
    lag: Lagged,
    u: &'a [f64],
    v: &'a [f64],
    dt: f64,
    forcing: Option<&'a StepForcing>,
}

impl StepProblem<'_> {
    fn residual(&self, y: &[f64]) -> Vec<f64> {
        let grid = self.model.grid();
        let prm = &self.model.params;
        let a = self.model.kernel.a_field().values();
        let n = grid.len();
        let (phi, mu, sig) = (&y[..n], &y[n..2 * n], &y[2 * n..]);
        let lmu = laplacian(grid, mu);
        let lsig = laplacian(grid, sig);
        let lphi = laplacian(grid, phi);
        let (phi0, sig0) = (self.old.phi.values(), self.old.sigma.values());
        let lag = &self.lag;
        let dt = self.dt;
        let mut r = vec![0.0; 3 * n];
        for i in 0..n {
            let w = sig[i] + prm.chi * (1.0 - phi[i]) - mu[i];
            let (fp, fm, fs) = match self.forcing {
                Some(f) => (f.phi.values()[i], f.mu.values()[i], f.sigma.values()[i]),
                None => (0.0, 0.0, 0.0),
            };
            r[i] = phi[i] - phi0[i] - dt * prm.m * lmu[i] - dt * lag.p[i] * w
                + dt * lag.h[i] * self.u[i]
                - dt * fp;
            r[n + i] = mu[i]
                - prm.tau * (phi[i] - phi0[i]) / dt
                - prm.a * self.model.potential.f1(1, phi[i])
                - prm.a * lag.f2p[i]
                - prm.b * a[i] * phi[i]
                + prm.b * lag.conv[i]
                + prm.chi * sig[i]
                - fm;
            r[2 * n + i] = sig[i] - sig0[i] - dt * prm.n * lsig[i]
                + dt * prm.n * prm.chi * lphi[i]
                + dt * lag.p[i] * w
                - dt * self.v[i]
                - dt * fs;
        }
        r
    }
}

/// One implicit step. `step_index` only labels diagnostics.
pub fn step(
    model: &Model,
    state: &StateSnapshot,
    u_next: &ScalarField,
    v_next: &ScalarField,
    dt: f64,
    forcing: Option<&StepForcing>,
    step_index: usize,
) -> Result<(StateSnapshot, StepReport)> {
    step_full(model, state, u_next, v_next, dt, forcing, step_index).map(|(s, r, _)| (s, r))
}

/// [`step`], also returning the factorised Jacobian at the converged level.
pub(crate) fn step_full(
    model: &Model,
    state: &StateSnapshot,
    u_next: &ScalarField,
    v_next: &ScalarField,
    dt: f64,
    forcing: Option<&StepForcing>,
    step_index: usize,
) -> Result<(StateSnapshot, StepReport, Factorized)> {
    let grid = model.grid();
    state.grid().check_same(grid)?;
    u_next.grid().check_same(grid)?;
    v_next.grid().check_same(grid)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} must be positive"
        )));
    }
    if !state.is_finite() || !u_next.is_finite() || !v_next.is_finite() {
        return Err(Error::NonFinite(format!("input of step {step_index}")));
    }
    if model.potential.is_singular() {
        check_separated(&model.potential, &state.phi, step_index)?;
    }
    let prob = StepProblem {
        model,
        old: state,
        lag: Lagged::new(model, &state.phi),
        u: u_next.values(),
        v: v_next.values(),
        dt,
        forcing,
    };
    let n = grid.len();
    let l = model.potential.half_width();
    let cfg = model.newton;
    let mut y = state.stacked();
    let mut small_update = false;
    let mut rn = f64::INFINITY;
    for it in 0..=cfg.max_iter {
        let r = prob.residual(&y);
        rn = inf_norm(&r);
        if !rn.is_finite() {
            break;
        }
        let done = rn <= cfg.tol || (small_update && rn <= 100.0 * cfg.tol);
        if !done && it == cfg.max_iter {
            break;
        }
        let jac = step_jacobian(model, &prob.lag.p, &y[..n], dt);
        let lu = model.factorize(&jac)?;
        let neg: Vec<f64> = r.iter().map(|a| -a).collect();
        let d = lu.solve(&neg)?;
        if done {
            if rn > cfg.tol {
                log::debug!("step {step_index}: Newton stagnated at residual {rn:.3e}");
            }
            // One more update drives the residual to round-off, which keeps
            // finite-difference probes clean; the Jacobian at this iterate is
            // kept for the sensitivities.
            let mut z = y.clone();
            for (a, b) in z.iter_mut().zip(&d) {
                *a += b;
            }
            let inside = !l.is_finite() || z[..n].iter().all(|v| v.abs() < l);
            if inside && inf_norm(&prob.residual(&z)) <= rn {
                y = z;
            }
            let (next, report) = finish(model, grid, &y, it + 1, rn, step_index)?;
            return Ok((next, report, lu));
        }
        let mut alpha: f64 = 1.0;
        if l.is_finite() {
            for i in 0..n {
                let next = y[i] + d[i];
                if next.abs() >= l {
                    let room = if d[i] > 0.0 { l - y[i] } else { l + y[i] };
                    alpha = alpha.min(0.9 * room / d[i].abs());
                }
            }
        }
        for (a, b) in y.iter_mut().zip(&d) {
            *a += alpha * b;
        }
        small_update = alpha * inf_norm(&d) <= 1e-14 * (1.0 + inf_norm(&y));
    }
    Err(Error::NewtonFailure {
        step: step_index,
        residual: rn,
        iterations: cfg.max_iter,
    })
}

fn finish(
    model: &Model,
    grid: &GridSpec,
    y: &[f64],
    iterations: usize,
    residual: f64,
    step_index: usize,
) -> Result<(StateSnapshot, StepReport)> {
    let next = StateSnapshot::from_stacked(grid, y);
    if !next.is_finite() {
        return Err(Error::NonFinite(format!("state after step {step_index}")));
    }
    if model.potential.is_singular() {
        check_separated(&model.potential, &next.phi, step_index)?;
    }
    Ok((
        next,
        StepReport {
            iterations,
            residual,
        },
    ))
}

/// Chemical potential at `t = 0` from the elliptic problem
/// `-tau m L mu + (1 + tau P(phi0)) mu = f`.
pub fn initial_mu(
    model: &Model,
    phi0: &ScalarField,
    sigma0: &ScalarField,
    u0: &ScalarField,
) -> Result<ScalarField> {
    let grid = model.grid();
    phi0.grid().check_same(grid)?;
    sigma0.grid().check_same(grid)?;
    u0.grid().check_same(grid)?;
    if !sigma0.is_finite() || !u0.is_finite() {
        return Err(Error::NonFinite("initial data".into()));
    }
    check_separated(&model.potential, phi0, 0)?;
    let prm = &model.params;
    let pot = &model.potential;
    let a = model.kernel.a_field().values();
    let conv = model.kernel.convolve_unchecked(phi0);
    let (phi, sig, u) = (phi0.values(), sigma0.values(), u0.values());
    let n = grid.len();
    let p: Vec<f64> = phi.iter().map(|&s| prm.proliferation.value(s)).collect();
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let h = prm.distribution.value(phi[i]);
        rhs[i] = prm.tau * p[i] * (sig[i] + prm.chi * (1.0 - phi[i])) - prm.tau * h * u[i]
            + prm.a * pot.eval(1, phi[i])?
            + prm.b * a[i] * phi[i]
            - prm.b * conv.values()[i]
            - prm.chi * sig[i];
    }
    let coef: Vec<f64> = p.iter().map(|&q| 1.0 + prm.tau * q).collect();
    let op = |x: &[f64]| -> Vec<f64> {
        let lx = laplacian(grid, x);
        (0..n)
            .map(|i| -prm.tau * prm.m * lx[i] + coef[i] * x[i])
            .collect()
    };
    let diag: Vec<f64> = (0..n)
        .map(|i| coef[i] + prm.tau * prm.m * grid.neighbors(i).map(|(_, w)| w).sum::<f64>())
        .collect();
    let atol = 1e-11 * inf_norm(&rhs).max(1.0);
    let mu = conjugate_gradient(op, &diag, &rhs, atol, 20 * n + 100)?;
    Ok(ScalarField::from_raw(*grid, mu))
}

/// Free energy
/// `int A F(phi) + B/2 a phi^2 - B/2 (J*phi) phi + sigma^2/2 + chi sigma (1 - phi)`.
pub fn energy(model: &Model, state: &StateSnapshot) -> Result<f64> {
    let prm = &model.params;
    let pot = &model.potential;
    let (phi, sig) = (state.phi.values(), state.sigma.values());
    let mut s = 0.0;
    for i in 0..phi.len() {
        s += prm.a * pot.eval(0, phi[i])?
            + 0.5 * sig[i] * sig[i]
            + prm.chi * sig[i] * (1.0 - phi[i]);
    }
    Ok(s * state.grid().cell_volume() + nonlocal_energy(model, &state.phi))
}

/// `B/2 int (a phi^2 - (J*phi) phi) = B/4 int int J(x-y) (phi(x)-phi(y))^2`.
pub fn nonlocal_energy(model: &Model, phi: &ScalarField) -> f64 {
    let a = model.kernel.a_field().values();
    let conv = model.kernel.convolve_unchecked(phi);
    let v = phi.values();
    let s: f64 = (0..v.len())
        .map(|i| a[i] * v[i] * v[i] - conv.values()[i] * v[i])
        .sum();
    0.5 * model.params.b * s * phi.grid().cell_volume()
}

/// Runs `initial_mu` followed by `steps` implicit steps.
pub fn simulate(
    model: &Model,
    phi0: &ScalarField,
    sigma0: &ScalarField,
    controls: &ControlPair,
    time: &TimeGrid,
) -> Result<Trajectory> {
    simulate_forced(model, phi0, sigma0, controls, time, None)
}

/// [`simulate`] with optional per-step forcing `forcing(n)` applied in the
/// step that produces level `n`.
pub fn simulate_forced(
    model: &Model,
    phi0: &ScalarField,
    sigma0: &ScalarField,
    controls: &ControlPair,
    time: &TimeGrid,
    forcing: Option<&(dyn Fn(usize) -> StepForcing + Sync)>,
) -> Result<Trajectory> {
    run(model, phi0, sigma0, controls, time, forcing, false).map(|(t, _)| t)
}

/// [`simulate`], also returning each step's factorised Jacobian.
pub(crate) fn simulate_factored(
    model: &Model,
    phi0: &ScalarField,
    sigma0: &ScalarField,
    controls: &ControlPair,
    time: &TimeGrid,
) -> Result<(Trajectory, Vec<Factorized>)> {
    run(model, phi0, sigma0, controls, time, None, true)
}

fn run(
    model: &Model,
    phi0: &ScalarField,
    sigma0: &ScalarField,
    controls: &ControlPair,
    time: &TimeGrid,
    forcing: Option<&(dyn Fn(usize) -> StepForcing + Sync)>,
    keep_factors: bool,
) -> Result<(Trajectory, Vec<Factorized>)> {
    let grid = model.grid();
    controls.check_against(grid, time)?;
    if !controls.u.is_finite() || !controls.v.is_finite() {
        return Err(Error::NonFinite("controls".into()));
    }
    let mu0 = initial_mu(model, phi0, sigma0, controls.u.node(0))?;
    let s0 = StateSnapshot::new(phi0.clone(), mu0, sigma0.clone())?;
    let dt = time.dt();
    let e0 = energy(model, &s0)?;
    let m0 = s0.mass();
    let mut monitors = vec![Monitor {
        time: 0.0,
        mass: m0,
        mass_ledger: 0.0,
        mass_defect: 0.0,
        energy: e0,
        max_abs_phi: s0.phi.max_abs(),
        newton_iterations: 0,
    }];
    let mut snapshots = vec![s0];
    let mut factors = Vec::new();
    let mut ledger = 0.0;
    let vol = grid.cell_volume();
    for k in 1..=time.steps() {
        let (u, v) = (controls.u.node(k), controls.v.node(k));
        let f = forcing.map(|f| f(k));
        let prev = &snapshots[k - 1];
        let (next, report, lu) = step_full(model, prev, u, v, dt, f.as_ref(), k)?;
        if keep_factors {
            factors.push(lu);
        }
        let source: f64 = prev
            .phi
            .values()
            .iter()
            .zip(u.values())
            .zip(v.values())
            .map(|((&p, &uu), &vv)| -model.params.distribution.value(p) * uu + vv)
            .sum();
        ledger += dt * source * vol;
        let mass = next.mass();
        monitors.push(Monitor {
            time: time.time(k),
            mass,
            mass_ledger: ledger,
            mass_defect: mass - m0 - ledger,
            energy: energy(model, &next)?,
            max_abs_phi: next.phi.max_abs(),
            newton_iterations: report.iterations,
        });
        log::trace!(
            "step {k}: {} Newton iterations, residual {:.2e}",
            report.iterations,
            report.residual
        );
        snapshots.push(next);
    }
    let traj = Trajectory {
        time: *time,
        snapshots,
        monitors,
    };
    Ok((traj, factors))
}

/// Per-step mass identity residual
/// `int (phi'+sigma'-phi-sigma) - dt int (-h(phi) u' + v')`.
pub fn mass_residuals(model: &Model, traj: &Trajectory, controls: &ControlPair) -> Vec<f64> {
    let dt = traj.time.dt();
    let vol = model.grid().cell_volume();
    traj.snapshots
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (u, v) = (controls.u.node(k + 1), controls.v.node(k + 1));
            let mut s = 0.0;
            for i in 0..u.len() {
                let h = model.params.distribution.value(w[0].phi.values()[i]);
                s += w[1].phi.values()[i] + w[1].sigma.values()[i]
                    - w[0].phi.values()[i]
                    - w[0].sigma.values()[i]
                    - dt * (-h * u.values()[i] + v.values()[i]);
            }
            s * vol
        })
        .collect()
}

/// Residual of the discrete energy balance on each step:
/// `(E' - E)/dt + tau |dphi/dt|^2 + m |grad mu'|^2 + n |grad N'|^2
///  + int P w'^2 + int h u' mu' - int v' N'` with `N = sigma + chi (1 - phi)`.
pub fn energy_residuals(
    model: &Model,
    traj: &Trajectory,
    controls: &ControlPair,
) -> Result<Vec<f64>> {
    let dt = traj.time.dt();
    let grid = model.grid();
    let vol = grid.cell_volume();
    let prm = &model.params;
    let mut out = Vec::with_capacity(traj.time.steps());
    let mut e_old = energy(model, &traj.snapshots[0])?;
    for k in 1..traj.snapshots.len() {
        let (old, new) = (&traj.snapshots[k - 1], &traj.snapshots[k]);
        let e_new = energy(model, new)?;
        let nut = new
            .sigma
            .zip_map(&new.phi, move |s, p| s + prm.chi * (1.0 - p));
        let (u, v) = (controls.u.node(k).values(), controls.v.node(k).values());
        let mut local = 0.0;
        for i in 0..grid.len() {
            let p0 = old.phi.values()[i];
            let d = (new.phi.values()[i] - p0) / dt;
            let w = nut.values()[i] - new.mu.values()[i];
            local += prm.tau * d * d
                + prm.proliferation.value(p0) * w * w
                + prm.distribution.value(p0) * u[i] * new.mu.values()[i]
                - v[i] * nut.values()[i];
        }
        let res = (e_new - e_old) / dt
            + local * vol
            + prm.m * h1_seminorm_sq(&new.mu)
            + prm.n * h1_seminorm_sq(&nut);
        out.push(res);
        e_old = e_new;
    }
    Ok(out)
}

/// Worst `|phi|` along a trajectory against the potential's bound `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationReport {
    pub max_abs: f64,
    pub node: usize,
    /// `None` for potentials defined on all of R.
    pub half_width: Option<f64>,
    /// `l - max_abs`.
    pub margin: Option<f64>,
    pub breach: bool,
}

pub fn separation_report(traj: &Trajectory, potential: &PotentialSpec) -> SeparationReport {
    let (node, max_abs) = traj
        .snapshots
        .iter()
        .map(|s| s.phi.max_abs())
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, m)| {
            if m > acc.1 || m.is_nan() {
                (i, m)
            } else {
                acc
            }
        });
    let l = potential.half_width();
    let (half_width, margin, breach) = if l.is_finite() {
        (Some(l), Some(l - max_abs), !(max_abs < l))
    } else {
        (None, None, !max_abs.is_finite())
    };
    SeparationReport {
        max_abs,
        node,
        half_width,
        margin,
        breach,
    }
}

/// One entry of a continuous-dependence probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceSample {
    pub delta: f64,
    /// `|S(c + delta d) - S(c)| / (delta |d|)`.
    pub ratio: f64,
}

/// Difference quotients of the control-to-state map along `direction`.
pub fn continuous_dependence(
    model: &Model,
    phi0: &ScalarField,
    sigma0: &ScalarField,
    controls: &ControlPair,
    direction: &ControlPair,
    time: &TimeGrid,
    deltas: &[f64],
    exec: Execution,
) -> Result<Vec<DependenceSample>> {
    let dn = direction.norm(time.dt());
    if !(dn > 0.0) {
        return Err(Error::InvalidArgument("direction must be nonzero".into()));
    }
    let base = simulate(model, phi0, sigma0, controls, time)?;
    let runs = par::map_jobs(deltas, exec, |&d| {
        simulate(model, phi0, sigma0, &controls.axpy(d, direction), time).map(|t| {
            DependenceSample {
                delta: d,
                ratio: t.distance(&base) / (d * dn),
            }
        })
    });
    runs.into_iter().collect()
}

/// `sum_i a_i b_i` over stacked state vectors; exposed for sensitivity tests.
pub fn state_dot(a: &StateSnapshot, b: &StateSnapshot) -> f64 {
    dot(a.phi.values(), b.phi.values())
        + dot(a.mu.values(), b.mu.values())
        + dot(a.sigma.values(), b.sigma.values())
}
