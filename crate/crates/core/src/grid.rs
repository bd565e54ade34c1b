//! Uniform cell-centred grids on rectangles with homogeneous Neumann
//! operators, plus the time grid and space-time field containers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Tensor-product grid on `(0, extent[0]) x (0, extent[1])`.
///
/// One-dimensional grids keep `cells[1] == 1` and ignore `extent[1]` for
/// volumes, so every loop can treat the grid as two-dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    extent: [f64; 2],
    cells: [usize; 2],
}

impl GridSpec {
    pub fn new(dim: usize, extent: &[f64], cells: &[usize]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if extent.len() != dim || cells.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and cell counts, got {} and {}",
                extent.len(),
                cells.len()
            )));
        }
        for a in 0..dim {
            if !(extent[a].is_finite() && extent[a] > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "extent[{a}] = {} must be positive",
                    extent[a]
                )));
            }
            if cells[a] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "cells[{a}] = {} must be at least 2",
                    cells[a]
                )));
            }
        }
        let (ext1, c1) = if dim == 2 {
            (extent[1], cells[1])
        } else {
            (1.0, 1)
        };
        Ok(Self {
            dim,
            extent: [extent[0], ext1],
            cells: [cells[0], c1],
        })
    }

    pub fn line(length: f64, cells: usize) -> Result<Self> {
        Self::new(1, &[length], &[cells])
    }

    pub fn rect(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(2, &[lx, ly], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn extent(&self) -> [f64; 2] {
        self.extent
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / self.cells[axis] as f64
    }

    /// Smallest spacing over the active axes.
    pub fn min_spacing(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|a| self.extent[a]).product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.cells[0] + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.cells[0], idx / self.cells[0])
    }

    /// Cell centre; the second coordinate is 0 on 1D grids.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        let x = (i as f64 + 0.5) * self.spacing(0);
        let y = if self.dim == 2 {
            (j as f64 + 0.5) * self.spacing(1)
        } else {
            0.0
        };
        [x, y]
    }

    /// Neighbouring cells across interior faces together with the stencil
    /// weight `1/h^2` of that face. Boundary faces carry no flux.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (i, j) = self.coords(idx);
        let nx = self.cells[0];
        let ny = self.cells[1];
        let wx = 1.0 / (self.spacing(0) * self.spacing(0));
        let wy = if self.dim == 2 {
            1.0 / (self.spacing(1) * self.spacing(1))
        } else {
            0.0
        };
        let mut out: [(usize, f64); 4] = [(usize::MAX, 0.0); 4];
        if i > 0 {
            out[0] = (idx - 1, wx);
        }
        if i + 1 < nx {
            out[1] = (idx + 1, wx);
        }
        if self.dim == 2 {
            if j > 0 {
                out[2] = (idx - nx, wy);
            }
            if j + 1 < ny {
                out[3] = (idx + nx, wy);
            }
        }
        out.into_iter().filter(|(k, _)| *k != usize::MAX)
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.cells, other.cells
            )))
        }
    }
}

/// Uniform time grid `t_n = n * dt`, `n = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon T = {horizon} must be positive"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "time steps must be at least 1".into(),
            ));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }
}

/// Cell-centred scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Self {
            grid: *grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn<F>(grid: &GridSpec, f: F) -> Self
    where
        F: Fn([f64; 2]) -> f64 + Sync + Send,
    {
        let g = *grid;
        Self {
            grid: g,
            values: par::map_range(g.len(), |k| f(g.center(k))),
        }
    }

    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values".into()));
        }
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map<F: Fn(f64) -> f64 + Sync + Send>(&self, f: F) -> Self {
        let v = &self.values;
        Self::from_raw(self.grid, par::map_range(v.len(), |k| f(v[k])))
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64 + Sync + Send>(&self, other: &Self, f: F) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let (a, b) = (&self.values, &other.values);
        Self::from_raw(self.grid, par::map_range(a.len(), |k| f(a[k], b[k])))
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        debug_assert_eq!(self.grid, x.grid);
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|a| *a *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map(|a| alpha * a)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Midpoint-rule integral over the domain.
    pub fn integral(&self) -> f64 {
        self.sum() * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete L2 norm.
    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }
}

/// Cell inner product (midpoint quadrature of the L2 product).
pub fn inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.grid.check_same(&g.grid)?;
    Ok(dot(&f.values, &g.values) * f.grid.cell_volume())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Five-point (three-point in 1D) Laplacian with mirrored ghost cells.
pub fn laplacian_neumann(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let v = &f.values;
    let out = par::map_range(g.len(), |k| {
        g.neighbors(k)
            .map(|(nb, w)| w * (v[nb] - v[k]))
            .sum::<f64>()
    });
    ScalarField::from_raw(g, out)
}

/// Discrete `int |grad f|^2` over interior faces; Neumann faces add nothing.
pub fn h1_seminorm_sq(f: &ScalarField) -> f64 {
    let g = f.grid;
    let v = &f.values;
    let vol = g.cell_volume();
    let mut s = 0.0;
    for k in 0..g.len() {
        for (nb, w) in g.neighbors(k) {
            if nb > k {
                let d = v[nb] - v[k];
                s += w * d * d;
            }
        }
    }
    s * vol
}

/// A field per time node `t_0, ..., t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    nodes: Vec<ScalarField>,
}

impl SpaceTimeField {
    pub fn new(nodes: Vec<ScalarField>) -> Result<Self> {
        let first = nodes.first().ok_or_else(|| {
            Error::ShapeMismatch("space-time field needs at least one node".into())
        })?;
        let g = *first.grid();
        for n in &nodes {
            n.grid.check_same(&g)?;
        }
        Ok(Self { nodes })
    }

    pub fn constant(grid: &GridSpec, time: &TimeGrid, c: f64) -> Self {
        Self {
            nodes: vec![ScalarField::constant(grid, c); time.steps() + 1],
        }
    }

    pub fn zeros(grid: &GridSpec, time: &TimeGrid) -> Self {
        Self::constant(grid, time, 0.0)
    }

    /// The same spatial field at every node.
    pub fn repeated(field: &ScalarField, time: &TimeGrid) -> Self {
        Self {
            nodes: vec![field.clone(); time.steps() + 1],
        }
    }

    pub fn from_fn<F>(grid: &GridSpec, time: &TimeGrid, f: F) -> Self
    where
        F: Fn([f64; 2], f64) -> f64 + Sync + Send,
    {
        let nodes = (0..=time.steps())
            .map(|n| {
                let t = time.time(n);
                ScalarField::from_fn(grid, |x| f(x, t))
            })
            .collect();
        Self { nodes }
    }

    pub fn zeros_like(other: &SpaceTimeField) -> Self {
        other.map(|_| 0.0)
    }

    pub fn grid(&self) -> &GridSpec {
        self.nodes[0].grid()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, n: usize) -> &ScalarField {
        &self.nodes[n]
    }

    pub fn node_mut(&mut self, n: usize) -> &mut ScalarField {
        &mut self.nodes[n]
    }

    pub fn nodes(&self) -> &[ScalarField] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [ScalarField] {
        &mut self.nodes
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().all(ScalarField::is_finite)
    }

    pub fn check_shape(&self, other: &SpaceTimeField) -> Result<()> {
        if self.nodes.len() != other.nodes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} vs {} time nodes",
                self.nodes.len(),
                other.nodes.len()
            )));
        }
        self.grid().check_same(other.grid())
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64 + Sync + Send + Copy>(&self, other: &Self, f: F) -> Self {
        Self {
            nodes: self
                .nodes
                .iter()
                .zip(&other.nodes)
                .map(|(a, b)| a.zip_map(b, f))
                .collect(),
        }
    }

    pub fn map<F: Fn(f64) -> f64 + Sync + Send + Copy>(&self, f: F) -> Self {
        Self {
            nodes: self.nodes.iter().map(|a| a.map(f)).collect(),
        }
    }

    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        for (a, b) in self.nodes.iter_mut().zip(&x.nodes) {
            a.axpy(alpha, b);
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map(move |a| alpha * a)
    }

    pub fn max_abs(&self) -> f64 {
        self.nodes.iter().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    /// Copies node 1 into node 0. Controls are piecewise constant on
    /// `(t_{n-1}, t_n]`, so the value at `t_0` is the first interval's value.
    pub fn tie_initial_node(&mut self) {
        if self.nodes.len() > 1 {
            let first = self.nodes[1].clone();
            self.nodes[0] = first;
        }
    }

    /// Space-time product `sum_{n>=1} dt (a_n, b_n)`; node 0 carries no weight.
    pub fn inner_q(&self, other: &Self, dt: f64) -> f64 {
        let vol = self.grid().cell_volume();
        self.nodes
            .iter()
            .zip(&other.nodes)
            .skip(1)
            .map(|(a, b)| dot(a.values(), b.values()))
            .sum::<f64>()
            * vol
            * dt
    }

    pub fn norm_q(&self, dt: f64) -> f64 {
        self.inner_q(self, dt).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &GridSpec, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::from_values(grid, v).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(3, &[1.0; 3], &[4; 3]).is_err());
        assert!(GridSpec::line(1.0, 1).is_err());
        assert!(GridSpec::line(0.0, 8).is_err());
        assert!(GridSpec::rect(1.0, 1.0, 4, 1).is_err());
        let g = GridSpec::rect(2.0, 1.0, 8, 4).unwrap();
        assert_eq!(g.len(), 32);
        assert!((g.spacing(0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = GridSpec::rect(1.0, 1.0, 7, 5).unwrap();
        let f = ScalarField::constant(&g, 3.25);
        assert_eq!(laplacian_neumann(&f).max_abs(), 0.0);
    }

    #[test]
    fn laplacian_columns_sum_to_zero() {
        for g in [
            GridSpec::line(1.0, 17).unwrap(),
            GridSpec::rect(1.0, 2.0, 9, 13).unwrap(),
        ] {
            let f = random_field(&g, 3);
            let l1: f64 = f.values().iter().map(|v| v.abs()).sum();
            assert!(laplacian_neumann(&f).sum().abs() <= 1e-12 * l1);
        }
    }

    #[test]
    fn laplacian_self_adjoint() {
        let g = GridSpec::rect(1.0, 1.0, 12, 10).unwrap();
        let f = random_field(&g, 1);
        let h = random_field(&g, 2);
        let a = inner(&laplacian_neumann(&f), &h).unwrap();
        let b = inner(&f, &laplacian_neumann(&h)).unwrap();
        let scale = f.norm() * h.norm();
        assert!((a - b).abs() <= 1e-12 * scale);
    }

    #[test]
    fn laplacian_second_order_on_cosine() {
        // Richardson: error ratio between successive halvings approaches 4.
        let err = |n: usize| {
            let g = GridSpec::line(1.0, n).unwrap();
            let k = std::f64::consts::PI;
            let f = ScalarField::from_fn(&g, |x| (k * x[0]).cos());
            let lf = laplacian_neumann(&f);
            lf.values()
                .iter()
                .zip(f.values())
                .map(|(a, b)| (a + k * k * b).abs())
                .fold(0.0, f64::max)
        };
        let e: Vec<f64> = [16, 32, 64, 128].iter().map(|&n| err(n)).collect();
        for w in e.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((1.9..=2.1).contains(&slope), "slope {slope}");
        }
    }

    #[test]
    fn inner_product_basics() {
        let g = GridSpec::rect(1.0, 1.0, 6, 6).unwrap();
        let one = ScalarField::constant(&g, 1.0);
        assert!((inner(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        let f = random_field(&g, 4);
        let h = random_field(&g, 5);
        assert_eq!(inner(&f, &h).unwrap(), inner(&h, &f).unwrap());
        assert!(inner(&f, &f).unwrap() > 0.0);
        let other = GridSpec::rect(1.0, 1.0, 6, 5).unwrap();
        assert!(inner(&f, &ScalarField::zeros(&other)).is_err());
    }

    #[test]
    fn h1_seminorm_of_linear_profile() {
        let g = GridSpec::line(1.0, 64).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0]);
        // 63 interior faces, each contributing (h/h)^2 * h.
        assert!((h1_seminorm_sq(&f) - 63.0 / 64.0).abs() < 1e-13);
        assert_eq!(h1_seminorm_sq(&ScalarField::constant(&g, 2.0)), 0.0);
        let f2 = f.scaled(2.0);
        assert!((h1_seminorm_sq(&f2) - 4.0 * h1_seminorm_sq(&f)).abs() < 1e-12);
    }

    #[test]
    fn summation_by_parts() {
        let g = GridSpec::rect(1.0, 1.5, 8, 11).unwrap();
        let f = random_field(&g, 9);
        let lhs = -inner(&laplacian_neumann(&f), &f).unwrap();
        assert!((lhs - h1_seminorm_sq(&f)).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
