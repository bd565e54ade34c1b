//! Control pairs `(u, v)` and their admissible sets.

use crate::error::{Error, Result};
use crate::grid::{dot, GridSpec, SpaceTimeField, TimeGrid};

/// Radiotherapy intensity `u` and nutrient/drug supply `v`, one field per
/// time node. Node 0 mirrors node 1: the scheme only ever reads nodes
/// `1..=N`, which hold the values on `(t_{n-1}, t_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPair {
    pub u: SpaceTimeField,
    pub v: SpaceTimeField,
}

impl ControlPair {
    pub fn new(mut u: SpaceTimeField, mut v: SpaceTimeField) -> Result<Self> {
        u.check_shape(&v)?;
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite("control".into()));
        }
        u.tie_initial_node();
        v.tie_initial_node();
        Ok(Self { u, v })
    }

    pub fn zeros(grid: &GridSpec, time: &TimeGrid) -> Self {
        Self {
            u: SpaceTimeField::zeros(grid, time),
            v: SpaceTimeField::zeros(grid, time),
        }
    }

    pub fn constant(grid: &GridSpec, time: &TimeGrid, u: f64, v: f64) -> Self {
        Self {
            u: SpaceTimeField::constant(grid, time, u),
            v: SpaceTimeField::constant(grid, time, v),
        }
    }

    pub fn steps(&self) -> usize {
        self.u.node_count() - 1
    }

    pub fn grid(&self) -> &GridSpec {
        self.u.grid()
    }

    pub fn check_against(&self, grid: &GridSpec, time: &TimeGrid) -> Result<()> {
        self.u.grid().check_same(grid)?;
        self.v.check_shape(&self.u)?;
        if self.steps() != time.steps() {
            return Err(Error::ShapeMismatch(format!(
                "controls have {} steps, time grid has {}",
                self.steps(),
                time.steps()
            )));
        }
        Ok(())
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &ControlPair) -> ControlPair {
        let mut out = self.clone();
        out.u.axpy(alpha, &other.u);
        out.v.axpy(alpha, &other.v);
        out
    }

    pub fn scaled(&self, alpha: f64) -> ControlPair {
        ControlPair {
            u: self.u.scaled(alpha),
            v: self.v.scaled(alpha),
        }
    }

    /// Product on `L2(Q_T)^2` with the right-endpoint rectangle rule.
    pub fn inner(&self, other: &ControlPair, dt: f64) -> f64 {
        self.u.inner_q(&other.u, dt) + self.v.inner_q(&other.v, dt)
    }

    pub fn norm(&self, dt: f64) -> f64 {
        self.inner(self, dt).sqrt()
    }
}

/// Discrete `H^1(0,T; L2)` norm with backward difference quotients:
/// `sum_{n>=1} dt |u_n|^2 + sum_{n>=2} dt |(u_n - u_{n-1}) / dt|^2`.
pub fn h1_time_norm(u: &SpaceTimeField, dt: f64) -> f64 {
    let vol = u.grid().cell_volume();
    let nodes = u.nodes();
    let mut s = 0.0;
    for n in 1..nodes.len() {
        let a = nodes[n].values();
        s += dt * dot(a, a);
        if n >= 2 {
            let b = nodes[n - 1].values();
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            s += d / dt;
        }
    }
    (s * vol).sqrt()
}

/// Box bounds for both controls and the `H^1` radius `M` for `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleSet {
    pub u_min: SpaceTimeField,
    pub u_max: SpaceTimeField,
    pub v_min: SpaceTimeField,
    pub v_max: SpaceTimeField,
    pub radius: f64,
}

impl AdmissibleSet {
    pub fn constant(
        grid: &GridSpec,
        time: &TimeGrid,
        u_bounds: (f64, f64),
        v_bounds: (f64, f64),
        radius: f64,
    ) -> Result<Self> {
        let set = Self {
            u_min: SpaceTimeField::constant(grid, time, u_bounds.0),
            u_max: SpaceTimeField::constant(grid, time, u_bounds.1),
            v_min: SpaceTimeField::constant(grid, time, v_bounds.0),
            v_max: SpaceTimeField::constant(grid, time, v_bounds.1),
            radius,
        };
        let v = set.violations();
        if v.is_empty() {
            Ok(set)
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Labelled list of violated requirements.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let fields = [&self.u_min, &self.u_max, &self.v_min, &self.v_max];
        if fields.iter().any(|f| !f.is_finite()) {
            out.push("C3: control bounds must be finite".to_string());
        }
        if self.u_min.nodes().iter().any(|f| f.min() < 0.0) {
            out.push(format!(
                "C3: u_min >= 0 (got min {})",
                self.u_min
                    .nodes()
                    .iter()
                    .fold(f64::INFINITY, |m, f| m.min(f.min()))
            ));
        }
        if let Some(gap) = inverted(&self.u_min, &self.u_max) {
            out.push(format!("C3: u_min <= u_max (violated by {gap:.3e})"));
        }
        if let Some(gap) = inverted(&self.v_min, &self.v_max) {
            out.push(format!("C3: v_min <= v_max (violated by {gap:.3e})"));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            out.push(format!("C3: H1 radius M > 0 (got {})", self.radius));
        }
        out
    }

    pub fn u_in_box(&self, u: &SpaceTimeField, tol: f64) -> bool {
        within(u, &self.u_min, &self.u_max, tol)
    }

    pub fn v_in_box(&self, v: &SpaceTimeField, tol: f64) -> bool {
        within(v, &self.v_min, &self.v_max, tol)
    }

    pub fn u_in_ball(&self, u: &SpaceTimeField, dt: f64, tol: f64) -> bool {
        h1_time_norm(u, dt) <= self.radius + tol
    }

    pub fn contains(&self, c: &ControlPair, dt: f64, tol: f64) -> bool {
        self.u_in_box(&c.u, tol) && self.v_in_box(&c.v, tol) && self.u_in_ball(&c.u, dt, tol)
    }
}

fn inverted(lo: &SpaceTimeField, hi: &SpaceTimeField) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for (a, b) in lo.nodes().iter().zip(hi.nodes()) {
        for (x, y) in a.values().iter().zip(b.values()) {
            worst = worst.max(x - y);
        }
    }
    (worst > 0.0).then_some(worst)
}

fn within(x: &SpaceTimeField, lo: &SpaceTimeField, hi: &SpaceTimeField, tol: f64) -> bool {
    x.nodes()
        .iter()
        .zip(lo.nodes())
        .zip(hi.nodes())
        .skip(1)
        .all(|((f, l), h)| {
            f.values()
                .iter()
                .zip(l.values())
                .zip(h.values())
                .all(|((v, a), b)| *v >= a - tol && *v <= b + tol)
        })
}
