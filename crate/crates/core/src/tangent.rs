//! Linearised state system: the exact derivative of the discrete step with
//! respect to the previous level and the controls.

use crate::control::ControlPair;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, TimeGrid};
use crate::linalg::Factorized;
use crate::par::{self, Execution};
use crate::state::{
    simulate, simulate_factored, step_jacobian, Lagged, Model, StateSnapshot, Trajectory,
};

/// Perturbation `(h, k)` of the controls `(u, v)`.
pub type ControlPerturbation = ControlPair;

/// Tangent `(xi, eta, rho)` of `(phi, mu, sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearisedSnapshot {
    pub xi: ScalarField,
    pub eta: ScalarField,
    pub rho: ScalarField,
}

impl LinearisedSnapshot {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            xi: ScalarField::zeros(grid),
            eta: ScalarField::zeros(grid),
            rho: ScalarField::zeros(grid),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.xi.is_finite() && self.eta.is_finite() && self.rho.is_finite()
    }

    fn from_stacked(grid: &GridSpec, y: Vec<f64>) -> Self {
        let s = StateSnapshot::from_stacked(grid, &y);
        Self {
            xi: s.phi,
            eta: s.mu,
            rho: s.sigma,
        }
    }
}

/// Linearisation of one step `n-1 -> n` at the converged new level.
pub(crate) struct StepLinearization {
    pub lu: Factorized,
    /// Coefficients at the old level.
    pub lag: Lagged,
    /// `w = sigma + chi (1 - phi) - mu` at the new level.
    pub w: Vec<f64>,
    pub dt: f64,
}

impl StepLinearization {
    pub fn new(model: &Model, old: &StateSnapshot, new: &StateSnapshot, dt: f64) -> Result<Self> {
        let lag = Lagged::new(model, &old.phi);
        let jac = step_jacobian(model, &lag.p, new.phi.values(), dt);
        let lu = model.factorize(&jac)?;
        Ok(Self::with_lu(model, lag, new, dt, lu))
    }

    /// Reuses a factorisation of the step Jacobian at `new`.
    pub fn from_factor(
        model: &Model,
        old: &StateSnapshot,
        new: &StateSnapshot,
        dt: f64,
        lu: Factorized,
    ) -> Self {
        Self::with_lu(model, Lagged::new(model, &old.phi), new, dt, lu)
    }

    fn with_lu(model: &Model, lag: Lagged, new: &StateSnapshot, dt: f64, lu: Factorized) -> Self {
        let chi = model.params.chi;
        let w = (0..new.phi.len())
            .map(|i| new.sigma.values()[i] + chi * (1.0 - new.phi.values()[i]) - new.mu.values()[i])
            .collect();
        Self { lu, lag, w, dt }
    }

    /// Right-hand side `-B prev - C (h, k)` of the tangent step.
    fn tangent_rhs(
        &self,
        model: &Model,
        prev: &LinearisedSnapshot,
        u: &[f64],
        h: &[f64],
        k: &[f64],
    ) -> Vec<f64> {
        let prm = &model.params;
        let n = u.len();
        let dt = self.dt;
        let lag = &self.lag;
        let conv = model.kernel.convolve_unchecked(&prev.xi);
        let (xi, rho) = (prev.xi.values(), prev.rho.values());
        let mut r = vec![0.0; 3 * n];
        for i in 0..n {
            let react = dt * lag.dp[i] * self.w[i] * xi[i];
            r[i] = xi[i] + react - dt * lag.dh[i] * u[i] * xi[i] - dt * lag.h[i] * h[i];
            r[n + i] =
                -prm.tau / dt * xi[i] + prm.a * lag.f2pp[i] * xi[i] - prm.b * conv.values()[i];
            r[2 * n + i] = rho[i] - react + dt * k[i];
        }
        r
    }

    /// `B^T lambda` restricted to the `(phi, sigma)` components.
    pub fn coupling_transpose(
        &self,
        model: &Model,
        lambda: &[f64],
        u: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let prm = &model.params;
        let n = u.len();
        let dt = self.dt;
        let lag = &self.lag;
        let (l1, l2, l3) = (&lambda[..n], &lambda[n..2 * n], &lambda[2 * n..]);
        let grid = model.grid();
        let conv = model
            .kernel
            .convolve_unchecked(&ScalarField::from_raw(*grid, l2.to_vec()));
        let mut bphi = vec![0.0; n];
        for i in 0..n {
            let react = dt * lag.dp[i] * self.w[i];
            bphi[i] = (-1.0 - react + dt * lag.dh[i] * u[i]) * l1[i]
                + (prm.tau / dt - prm.a * lag.f2pp[i]) * l2[i]
                + prm.b * conv.values()[i]
                + react * l3[i];
        }
        let bsig = l3.iter().map(|a| -a).collect();
        (bphi, bsig)
    }
}

/// One tangent step from `prev` at `t_{n-1}` along the base step `old -> new`.
#[allow(clippy::too_many_arguments)]
pub fn tangent_step(
    model: &Model,
    prev: &LinearisedSnapshot,
    old: &StateSnapshot,
    new: &StateSnapshot,
    u_next: &ScalarField,
    h_next: &ScalarField,
    k_next: &ScalarField,
    dt: f64,
) -> Result<LinearisedSnapshot> {
    let grid = model.grid();
    for f in [
        &prev.xi, &prev.rho, &old.phi, &new.phi, u_next, h_next, k_next,
    ] {
        f.grid().check_same(grid)?;
    }
    let lin = StepLinearization::new(model, old, new, dt)?;
    advance(model, &lin, prev, u_next, h_next, k_next)
}

fn advance(
    model: &Model,
    lin: &StepLinearization,
    prev: &LinearisedSnapshot,
    u: &ScalarField,
    h: &ScalarField,
    k: &ScalarField,
) -> Result<LinearisedSnapshot> {
    let rhs = lin.tangent_rhs(model, prev, u.values(), h.values(), k.values());
    let y = lin.lu.solve(&rhs)?;
    Ok(LinearisedSnapshot::from_stacked(model.grid(), y))
}

/// Factorised step Jacobians along a base trajectory, shared by tangent and
/// adjoint solves.
pub struct Linearization<'a> {
    pub(crate) model: &'a Model,
    pub(crate) base: &'a Trajectory,
    pub(crate) controls: &'a ControlPair,
    pub(crate) steps: Vec<StepLinearization>,
}

impl<'a> Linearization<'a> {
    pub fn new(model: &'a Model, base: &'a Trajectory, controls: &'a ControlPair) -> Result<Self> {
        controls.check_against(model.grid(), &base.time)?;
        if base.snapshots.len() != base.time.steps() + 1 {
            return Err(Error::ShapeMismatch("incomplete base trajectory".into()));
        }
        let dt = base.time.dt();
        let steps = par::map_range(base.time.steps(), |k| {
            StepLinearization::new(model, &base.snapshots[k], &base.snapshots[k + 1], dt)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            base,
            controls,
            steps,
        })
    }

    /// Builds on the factorisations kept by the forward solve.
    pub(crate) fn from_factors(
        model: &'a Model,
        base: &'a Trajectory,
        controls: &'a ControlPair,
        factors: Vec<Factorized>,
    ) -> Result<Self> {
        controls.check_against(model.grid(), &base.time)?;
        if base.snapshots.len() != base.time.steps() + 1 || factors.len() != base.time.steps() {
            return Err(Error::ShapeMismatch("incomplete base trajectory".into()));
        }
        let dt = base.time.dt();
        let steps = factors
            .into_iter()
            .enumerate()
            .map(|(k, lu)| {
                StepLinearization::from_factor(
                    model,
                    &base.snapshots[k],
                    &base.snapshots[k + 1],
                    dt,
                    lu,
                )
            })
            .collect();
        Ok(Self {
            model,
            base,
            controls,
            steps,
        })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn base(&self) -> &Trajectory {
        self.base
    }

    /// Tangent trajectory (zero at `t_0`) for a control perturbation.
    pub fn tangent(&self, dir: &ControlPerturbation) -> Result<Vec<LinearisedSnapshot>> {
        dir.check_against(self.model.grid(), &self.base.time)?;
        if !dir.u.is_finite() || !dir.v.is_finite() {
            return Err(Error::NonFinite("perturbation".into()));
        }
        let mut out = vec![LinearisedSnapshot::zeros(self.model.grid())];
        for (k, lin) in self.steps.iter().enumerate() {
            let next = advance(
                self.model,
                lin,
                &out[k],
                self.controls.u.node(k + 1),
                dir.u.node(k + 1),
                dir.v.node(k + 1),
            )?;
            out.push(next);
        }
        Ok(out)
    }
}

/// Simulates the base trajectory and returns its tangent along `dir`.
pub fn tangent_solve(
    model: &Model,
    phi0: &ScalarField,
    sigma0: &ScalarField,
    controls: &ControlPair,
    dir: &ControlPerturbation,
    time: &TimeGrid,
) -> Result<(Trajectory, Vec<LinearisedSnapshot>)> {
    let (base, factors) = simulate_factored(model, phi0, sigma0, controls, time)?;
    let tan = Linearization::from_factors(model, &base, controls, factors)?.tangent(dir)?;
    Ok((base, tan))
}

/// Remainders `|S(c + eps d) - S(c) - eps S'(c) d|` of a first-order
/// expansion of the control-to-state map.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorReport {
    pub eps: Vec<f64>,
    pub remainder: Vec<f64>,
    /// Log-log slopes between consecutive ladder entries.
    pub slopes: Vec<f64>,
    /// Least-squares slope over the entries above the round-off floor.
    pub fitted_slope: f64,
    pub floor: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn taylor_test(
    model: &Model,
    phi0: &ScalarField,
    sigma0: &ScalarField,
    controls: &ControlPair,
    dir: &ControlPerturbation,
    time: &TimeGrid,
    eps: &[f64],
    exec: Execution,
) -> Result<TaylorReport> {
    if eps.len() < 2 {
        return Err(Error::InvalidArgument(
            "Taylor test needs at least two step sizes".into(),
        ));
    }
    let (base, tan) = tangent_solve(model, phi0, sigma0, controls, dir, time)?;
    let dt = time.dt();
    let vol = model.grid().cell_volume();
    let runs = par::map_jobs(eps, exec, |&e| {
        simulate(model, phi0, sigma0, &controls.axpy(e, dir), time)
    });
    let mut remainder = Vec::with_capacity(eps.len());
    let mut scale: f64 = 0.0;
    for (run, &e) in runs.into_iter().zip(eps) {
        let run = run?;
        let mut s = 0.0;
        for ((a, b), t) in run.snapshots.iter().zip(&base.snapshots).zip(&tan).skip(1) {
            for (x, y, z) in [
                (&a.phi, &b.phi, &t.xi),
                (&a.mu, &b.mu, &t.eta),
                (&a.sigma, &b.sigma, &t.rho),
            ] {
                for i in 0..x.len() {
                    let r = x.values()[i] - y.values()[i] - e * z.values()[i];
                    s += r * r;
                }
                scale = scale.max(y.max_abs());
            }
        }
        remainder.push((s * vol * dt).sqrt());
    }
    let slopes = remainder
        .windows(2)
        .zip(eps.windows(2))
        .map(|(r, e)| (r[0] / r[1]).ln() / (e[0] / e[1]).ln())
        .collect();
    // Differences of O(1) states lose ~1e-13 to the Newton tolerance.
    let floor = 1e-13 * scale.max(1.0) * (time.horizon() * model.grid().measure()).sqrt();
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(&remainder)
        .filter(|(_, &r)| r > floor)
        .map(|(&e, &r)| (e.ln(), r.ln()))
        .collect();
    let fitted_slope = if pts.len() >= 2 {
        ls_slope(&pts)
    } else {
        f64::NAN
    };
    Ok(TaylorReport {
        eps: eps.to_vec(),
        remainder,
        slopes,
        fitted_slope,
        floor,
    })
}

pub(crate) fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeField;
    use crate::kernel::{KernelSpec, KernelTable};
    use crate::model::ModelParams;
    use crate::potential::PotentialSpec;

    fn setup() -> (Model, ScalarField, ScalarField, ControlPair, TimeGrid) {
        let g = GridSpec::rect(1.0, 1.0, 8, 8).unwrap();
        let kernel = KernelTable::build(KernelSpec::Gaussian { width: 0.2 }, &g).unwrap();
        let m = Model::new(ModelParams::default(), PotentialSpec::default(), kernel).unwrap();
        let phi0 = ScalarField::from_fn(&g, |x| 0.6 * (3.0 * x[0]).cos() * (2.0 * x[1]).cos());
        let sig0 = ScalarField::constant(&g, 0.5);
        let t = TimeGrid::new(0.04, 4).unwrap();
        let c = ControlPair::new(
            SpaceTimeField::from_fn(&g, &t, |x, s| 0.3 + x[0] * s),
            SpaceTimeField::constant(&g, &t, 0.2),
        )
        .unwrap();
        (m, phi0, sig0, c, t)
    }

    fn dir(g: &GridSpec, t: &TimeGrid, a: f64) -> ControlPair {
        ControlPair::new(
            SpaceTimeField::from_fn(g, t, move |x, s| a * (x[1] - s)),
            SpaceTimeField::from_fn(g, t, move |x, _| a * x[0] * x[0]),
        )
        .unwrap()
    }

    #[test]
    fn zero_perturbation_gives_zero_tangent() {
        let (m, p, s, c, t) = setup();
        let (_, tan) =
            tangent_solve(&m, &p, &s, &c, &ControlPair::zeros(m.grid(), &t), &t).unwrap();
        for x in &tan {
            assert_eq!(x.xi.max_abs() + x.eta.max_abs() + x.rho.max_abs(), 0.0);
        }
    }

    #[test]
    fn superposition() {
        let (m, p, s, c, t) = setup();
        let base = simulate(&m, &p, &s, &c, &t).unwrap();
        let lin = Linearization::new(&m, &base, &c).unwrap();
        let (d1, d2) = (dir(m.grid(), &t, 1.0), dir(m.grid(), &t, -0.3).scaled(2.0));
        let a = lin.tangent(&d1).unwrap();
        let b = lin.tangent(&d2).unwrap();
        let ab = lin.tangent(&d1.axpy(1.0, &d2)).unwrap();
        for k in 0..a.len() {
            for (x, y, z) in [
                (&a[k].xi, &b[k].xi, &ab[k].xi),
                (&a[k].rho, &b[k].rho, &ab[k].rho),
            ] {
                for i in 0..x.len() {
                    assert!((x.values()[i] + y.values()[i] - z.values()[i]).abs() <= 1e-11);
                }
            }
        }
    }

    #[test]
    fn single_step_matches_forward_difference() {
        let (m, p, s, c, t) = setup();
        let base = simulate(&m, &p, &s, &c, &t).unwrap();
        let d = dir(m.grid(), &t, 1.0);
        let tan = tangent_step(
            &m,
            &LinearisedSnapshot::zeros(m.grid()),
            &base.snapshots[0],
            &base.snapshots[1],
            c.u.node(1),
            d.u.node(1),
            d.v.node(1),
            t.dt(),
        )
        .unwrap();
        let eps = 1e-6;
        let cp = c.axpy(eps, &d);
        let (pert, _) = crate::state::step(
            &m,
            &base.snapshots[0],
            cp.u.node(1),
            cp.v.node(1),
            t.dt(),
            None,
            1,
        )
        .unwrap();
        for i in 0..tan.xi.len() {
            let fd = (pert.phi.values()[i] - base.snapshots[1].phi.values()[i]) / eps;
            assert!((fd - tan.xi.values()[i]).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn tangent_mass_identity() {
        let (m, p, s, c, t) = setup();
        let base = simulate(&m, &p, &s, &c, &t).unwrap();
        let d = dir(m.grid(), &t, 1.0);
        let tan = Linearization::new(&m, &base, &c)
            .unwrap()
            .tangent(&d)
            .unwrap();
        let prm = &m.params;
        for k in 1..tan.len() {
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for i in 0..m.grid().len() {
                let ph = base.snapshots[k - 1].phi.values()[i];
                lhs += tan[k].xi.values()[i] + tan[k].rho.values()[i]
                    - tan[k - 1].xi.values()[i]
                    - tan[k - 1].rho.values()[i];
                rhs += t.dt()
                    * (-prm.distribution.value(ph) * d.u.node(k).values()[i]
                        - prm.distribution.derivative(ph)
                            * tan[k - 1].xi.values()[i]
                            * c.u.node(k).values()[i]
                        + d.v.node(k).values()[i]);
            }
            assert!((lhs - rhs).abs() <= 1e-12);
        }
    }
}
