//! `L2(Q_T)` projections onto the admissible control sets.

use std::f64::consts::PI;

use crate::control::{h1_time_norm, AdmissibleSet};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, SpaceTimeField};

fn check_bounds(
    x: &SpaceTimeField,
    lo: &SpaceTimeField,
    hi: &SpaceTimeField,
    name: &str,
) -> Result<()> {
    x.check_shape(lo)?;
    x.check_shape(hi)?;
    for (n, (a, b)) in lo.nodes().iter().zip(hi.nodes()).enumerate() {
        for (i, (l, h)) in a.values().iter().zip(b.values()).enumerate() {
            if !(l.is_finite() && h.is_finite()) {
                return Err(Error::InvertedBounds(format!(
                    "{name}: non-finite bound at node {n}, cell {i}"
                )));
            }
            if l > h {
                return Err(Error::InvertedBounds(format!(
                    "{name}: min {l} > max {h} at node {n}, cell {i}"
                )));
            }
        }
    }
    Ok(())
}

fn clamp_field(x: &SpaceTimeField, lo: &SpaceTimeField, hi: &SpaceTimeField) -> SpaceTimeField {
    let nodes = x
        .nodes()
        .iter()
        .zip(lo.nodes())
        .zip(hi.nodes())
        .map(|((f, l), h)| {
            let v = f
                .values()
                .iter()
                .zip(l.values())
                .zip(h.values())
                .map(|((&v, &a), &b)| v.max(a).min(b))
                .collect();
            ScalarField::from_values(f.grid(), v).expect("same grid")
        })
        .collect();
    let mut out = SpaceTimeField::new(nodes).expect("nonempty");
    out.tie_initial_node();
    out
}

/// Pointwise clamp `min(v_max, max(v, v_min))`.
pub fn project_v(
    v: &SpaceTimeField,
    v_min: &SpaceTimeField,
    v_max: &SpaceTimeField,
) -> Result<SpaceTimeField> {
    check_bounds(v, v_min, v_max, "v")?;
    Ok(clamp_field(v, v_min, v_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    /// Multiplier bisection with a per-cell active-set solve.
    #[default]
    Exact,
    Dykstra,
}

/// How `U_ad` projections are computed. `max_sweeps` and `tol` only apply
/// to Dykstra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub method: ProjectionMethod,
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            method: ProjectionMethod::Exact,
            max_sweeps: 5000,
            tol: 1e-12,
        }
    }
}

/// Cosine basis diagonalising the path-graph Laplacian on nodes `1..=N`.
struct TimeBasis {
    n: usize,
    /// `basis[j][m]`, orthonormal.
    basis: Vec<Vec<f64>>,
    eig: Vec<f64>,
}

impl TimeBasis {
    fn new(n: usize) -> Self {
        let basis = (0..n)
            .map(|j| {
                let c = if j == 0 {
                    (1.0 / n as f64).sqrt()
                } else {
                    (2.0 / n as f64).sqrt()
                };
                (0..n)
                    .map(|m| c * (PI * j as f64 * (m as f64 + 0.5) / n as f64).cos())
                    .collect()
            })
            .collect();
        let eig = (0..n)
            .map(|j| 2.0 - 2.0 * (PI * j as f64 / n as f64).cos())
            .collect();
        Self { n, basis, eig }
    }
}

/// Projection onto `{ |u|_{H1(0,T;L2)} <= M }` in the `L2(Q_T)` metric.
///
/// The ball is an ellipsoid in that metric; in the cosine basis in time the
/// constraint is diagonal and the projection reduces to one scalar root for
/// the multiplier. For time-constant `u` it is radial scaling.
pub fn project_h1_ball(u: &SpaceTimeField, radius: f64, dt: f64) -> SpaceTimeField {
    let norm = h1_time_norm(u, dt);
    if norm <= radius {
        return u.clone();
    }
    let steps = u.node_count() - 1;
    let cells = u.grid().len();
    let vol = u.grid().cell_volume();
    let tb = TimeBasis::new(steps);
    // Coefficients c[j][i] of each cell's time series.
    let mut coef = vec![vec![0.0; cells]; tb.n];
    for (j, row) in coef.iter_mut().enumerate() {
        for m in 0..steps {
            let b = tb.basis[j][m];
            for (c, v) in row.iter_mut().zip(u.node(m + 1).values()) {
                *c += b * v;
            }
        }
    }
    let weight: Vec<f64> = tb.eig.iter().map(|l| 1.0 + l / (dt * dt)).collect();
    let energy: Vec<f64> = coef
        .iter()
        .map(|row| row.iter().map(|c| c * c).sum())
        .collect();
    let h = |kappa: f64| -> f64 {
        (0..tb.n)
            .map(|j| weight[j] * energy[j] / (1.0 + kappa * weight[j]).powi(2))
            .sum::<f64>()
            * dt
            * vol
    };
    let target = radius * radius;
    let (mut lo, mut hi) = (0.0, 1.0);
    while h(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let kappa = hi;
    let mut nodes = vec![ScalarField::zeros(u.grid()); steps + 1];
    for j in 0..tb.n {
        let f = 1.0 / (1.0 + kappa * weight[j]);
        for m in 0..steps {
            let b = tb.basis[j][m] * f;
            for (o, c) in nodes[m + 1].values_mut().iter_mut().zip(&coef[j]) {
                *o += b * c;
            }
        }
    }
    let mut out = SpaceTimeField::new(nodes).expect("nonempty");
    out.tie_initial_node();
    out
}

fn check_set(u: &SpaceTimeField, set: &AdmissibleSet) -> Result<()> {
    check_bounds(u, &set.u_min, &set.u_max, "u")?;
    if !(set.radius.is_finite() && set.radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "H1 radius must be positive, got {}",
            set.radius
        )));
    }
    Ok(())
}

/// Projection onto `U_ad` (box and `H1` ball).
pub fn project_u(
    u: &SpaceTimeField,
    set: &AdmissibleSet,
    dt: f64,
    cfg: &ProjectionConfig,
) -> Result<SpaceTimeField> {
    match cfg.method {
        ProjectionMethod::Exact => project_u_exact(u, set, dt),
        ProjectionMethod::Dykstra => project_u_dykstra(u, set, dt, cfg),
    }
}

/// Per-cell time series over nodes `1..=N` with their bounds.
struct CellSeries {
    x: Vec<Vec<f64>>,
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
}

impl CellSeries {
    fn new(u: &SpaceTimeField, set: &AdmissibleSet) -> Self {
        let cells = u.grid().len();
        let take = |f: &SpaceTimeField| -> Vec<Vec<f64>> {
            (0..cells)
                .map(|i| f.nodes()[1..].iter().map(|n| n.values()[i]).collect())
                .collect()
        };
        Self {
            x: take(u),
            lo: take(&set.u_min),
            hi: take(&set.u_max),
        }
    }
}

/// `sum_n u_n^2 + sum_n (u_n - u_{n-1})^2 / dt^2` for one series.
fn series_q(u: &[f64], dt: f64) -> f64 {
    let a: f64 = u.iter().map(|v| v * v).sum();
    let d: f64 = u.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    a + d / (dt * dt)
}

/// Minimises `alpha/2 |u - x|^2 + beta/2 u^T (I + L/dt^2) u` over the box,
/// `L` the path Laplacian, by a primal active-set method started from the
/// feasible point `start`.
fn box_qp(
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    start: &[f64],
    alpha: f64,
    beta: f64,
    dt: f64,
) -> Vec<f64> {
    let n = x.len();
    let k = beta / (dt * dt);
    let diag = |i: usize| {
        let deg = if n == 1 {
            0.0
        } else if i == 0 || i == n - 1 {
            1.0
        } else {
            2.0
        };
        alpha + beta + k * deg
    };
    let rhs: Vec<f64> = x.iter().map(|v| alpha * v).collect();
    let grad = |u: &[f64], i: usize| {
        let mut s = diag(i) * u[i] - rhs[i];
        if i > 0 {
            s -= k * u[i - 1];
        }
        if i + 1 < n {
            s -= k * u[i + 1];
        }
        s
    };
    let mut u: Vec<f64> = (0..n).map(|i| start[i].max(lo[i]).min(hi[i])).collect();
    // 0 free, -1 fixed at lower bound, +1 fixed at upper bound.
    let mut state: Vec<i8> = (0..n)
        .map(|i| {
            if u[i] == lo[i] {
                -1
            } else if u[i] == hi[i] {
                1
            } else {
                0
            }
        })
        .collect();
    let mag = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        + (alpha + beta + 4.0 * k) * u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let drop_tol = 1e-13 * mag.max(f64::MIN_POSITIVE);
    let (mut sub, mut dia, mut sup, mut z) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for _ in 0..(20 * n + 100) {
        for i in 0..n {
            if state[i] == 0 {
                sub[i] = if i > 0 { -k } else { 0.0 };
                sup[i] = if i + 1 < n { -k } else { 0.0 };
                dia[i] = diag(i);
                z[i] = rhs[i];
            } else {
                sub[i] = 0.0;
                sup[i] = 0.0;
                dia[i] = 1.0;
                z[i] = u[i];
            }
        }
        thomas(&sub, &mut dia, &sup, &mut z);
        let mut step = 1.0;
        let mut block = None;
        for i in 0..n {
            if state[i] != 0 {
                continue;
            }
            let d = z[i] - u[i];
            let room = if d < 0.0 {
                lo[i] - u[i]
            } else if d > 0.0 {
                hi[i] - u[i]
            } else {
                continue;
            };
            let t = (room / d).max(0.0);
            if t < step {
                step = t;
                block = Some((i, if d < 0.0 { -1 } else { 1 }));
            }
        }
        for i in 0..n {
            if state[i] == 0 {
                u[i] = (u[i] + step * (z[i] - u[i])).max(lo[i]).min(hi[i]);
            }
        }
        if let Some((i, s)) = block {
            state[i] = s;
            u[i] = if s < 0 { lo[i] } else { hi[i] };
            continue;
        }
        // Stationary on the working set: release the worst multiplier.
        let mut worst = (drop_tol, None);
        for i in 0..n {
            let g = grad(&u, i);
            let viol = match state[i] {
                -1 => -g,
                1 => g,
                _ => continue,
            };
            if viol > worst.0 && lo[i] < hi[i] {
                worst = (viol, Some(i));
            }
        }
        match worst.1 {
            Some(i) => state[i] = 0,
            None => break,
        }
    }
    u
}

/// In-place Thomas solve; the solution is left in `b`.
fn thomas(sub: &[f64], dia: &mut [f64], sup: &[f64], b: &mut [f64]) {
    let n = b.len();
    for i in 1..n {
        let w = sub[i] / dia[i - 1];
        dia[i] -= w * sup[i - 1];
        b[i] -= w * b[i - 1];
    }
    b[n - 1] /= dia[n - 1];
    for i in (0..n - 1).rev() {
        b[i] = (b[i] - sup[i] * b[i + 1]) / dia[i];
    }
}

/// Exact projection: the multiplier `kappa` of the ball constraint is found
/// by bisection, and for fixed `kappa` each cell is an independent
/// box-constrained tridiagonal QP.
pub fn project_u_exact(u: &SpaceTimeField, set: &AdmissibleSet, dt: f64) -> Result<SpaceTimeField> {
    check_set(u, set)?;
    let cs = CellSeries::new(u, set);
    let scale = dt * u.grid().cell_volume();
    let target = set.radius * set.radius;
    let solve = |kappa: f64| -> (Vec<Vec<f64>>, f64) {
        let sol: Vec<Vec<f64>> = (0..cs.x.len())
            .map(|i| box_qp(&cs.x[i], &cs.lo[i], &cs.hi[i], &cs.x[i], 1.0, kappa, dt))
            .collect();
        let q = scale * sol.iter().map(|s| series_q(s, dt)).sum::<f64>();
        (sol, q)
    };
    let (clamped, q0) = solve(0.0);
    let sol = if q0 <= target {
        clamped
    } else {
        let qmin = scale
            * (0..cs.x.len())
                .map(|i| {
                    let lo = &cs.lo[i];
                    series_q(&box_qp(&cs.x[i], lo, &cs.hi[i], lo, 0.0, 1.0, dt), dt)
                })
                .sum::<f64>();
        if qmin > target {
            return Err(Error::EmptyIntersection {
                gap: qmin.sqrt() - set.radius,
            });
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = loop {
            let (s, q) = solve(hi);
            if q <= target {
                break s;
            }
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::EmptyIntersection {
                    gap: q.sqrt() - set.radius,
                });
            }
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (s, q) = solve(mid);
            if q <= target {
                hi = mid;
                best = s;
            } else {
                lo = mid;
            }
        }
        best
    };
    let grid = *u.grid();
    let steps = u.node_count() - 1;
    let mut nodes = vec![ScalarField::zeros(&grid); steps + 1];
    for (i, s) in sol.iter().enumerate() {
        for (m, v) in s.iter().enumerate() {
            nodes[m + 1].values_mut()[i] = *v;
        }
    }
    let mut out = SpaceTimeField::new(nodes).expect("nonempty");
    out.tie_initial_node();
    Ok(out)
}

/// Projection onto `U_ad` by Dykstra's alternating projections.
pub fn project_u_dykstra(
    u: &SpaceTimeField,
    set: &AdmissibleSet,
    dt: f64,
    cfg: &ProjectionConfig,
) -> Result<SpaceTimeField> {
    check_set(u, set)?;
    let mut tied = u.clone();
    tied.tie_initial_node();
    let mut x = tied;
    let mut p = SpaceTimeField::zeros_like(&x);
    let mut q = SpaceTimeField::zeros_like(&x);
    let mut gap = f64::INFINITY;
    for _ in 0..cfg.max_sweeps {
        let xp = x.zip_map(&p, |a, b| a + b);
        let a = clamp_field(&xp, &set.u_min, &set.u_max);
        p = xp.zip_map(&a, |s, t| s - t);
        let aq = a.zip_map(&q, |s, t| s + t);
        let b = project_h1_ball(&aq, set.radius, dt);
        q = aq.zip_map(&b, |s, t| s - t);
        let change = b.zip_map(&x, |s, t| s - t).max_abs();
        gap = box_violation(&b, set);
        x = b;
        if change <= cfg.tol && gap <= cfg.tol {
            return Ok(x);
        }
    }
    Err(Error::EmptyIntersection { gap })
}

fn box_violation(x: &SpaceTimeField, set: &AdmissibleSet) -> f64 {
    let mut worst: f64 = 0.0;
    for ((f, l), h) in x
        .nodes()
        .iter()
        .zip(set.u_min.nodes())
        .zip(set.u_max.nodes())
        .skip(1)
    {
        for ((v, a), b) in f.values().iter().zip(l.values()).zip(h.values()) {
            worst = worst.max(a - v).max(v - b);
        }
    }
    worst
}
