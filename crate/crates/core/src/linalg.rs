//! Sparse linear algebra for the implicit steps.
//!
//! Small and medium systems (up to 64x64 cells, i.e. 3 * 4096 unknowns) are
//! factorised with a sparse LU; larger ones fall back to Jacobi-preconditioned
//! BiCGStab. Both expose plain and transposed solves, the latter being what
//! the adjoint sweep needs.

use faer::linalg::solvers::Solve;
use std::sync::OnceLock;

use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};
use crate::grid::dot;

/// Systems with at most this many grid cells use the direct solver.
pub const DIRECT_MAX_CELLS: usize = 64 * 64;

/// Coordinate-format assembly buffer. Duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    /// Explicit zeros are kept so that the sparsity pattern depends only on
    /// the call sequence.
    pub fn push(&mut self, row: usize, col: usize, v: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, v));
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n, &self.entries)
    }
}

/// Compressed sparse rows, used for matrix-vector products.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        sorted.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.vals[k] * x[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (r, &xr) in x.iter().enumerate().take(self.n) {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.cols[k]] += self.vals[k] * xr;
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.cols[k] == r)
                    .map(|k| self.vals[k])
                    .unwrap_or(0.0)
            })
            .collect()
    }

    fn triplets(&self) -> Vec<Triplet<usize, usize, f64>> {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                t.push(Triplet::new(r, self.cols[k], self.vals[k]));
            }
        }
        t
    }
}

/// Which backend a factorisation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    SparseLu,
    BiCgStab,
}

impl Backend {
    pub fn for_cells(cells: usize) -> Self {
        if cells <= DIRECT_MAX_CELLS {
            Backend::SparseLu
        } else {
            Backend::BiCgStab
        }
    }
}

/// Symbolic LU analysis shared by all matrices with one sparsity pattern.
#[derive(Debug, Default)]
pub struct SymbolicCache {
    cell: OnceLock<(Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
}

impl SymbolicCache {
    pub fn new() -> Self {
        Self::default()
    }
}

/// A matrix prepared for repeated plain and transposed solves.
pub enum Factorized {
    Direct(Box<Lu<usize, f64>>),
    Iterative { a: CsrMatrix, inv_diag: Vec<f64> },
}

impl std::fmt::Debug for Factorized {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Factorized::Direct(_) => write!(f, "Factorized::Direct"),
            Factorized::Iterative { a, .. } => write!(f, "Factorized::Iterative(n = {})", a.dim()),
        }
    }
}

impl Factorized {
    pub fn new(a: &CsrMatrix, backend: Backend) -> Result<Self> {
        Self::with_cache(a, backend, None)
    }

    /// Like [`new`](Self::new), reusing the symbolic analysis stored in
    /// `cache` when the pattern matches.
    pub fn with_cache(
        a: &CsrMatrix,
        backend: Backend,
        cache: Option<&SymbolicCache>,
    ) -> Result<Self> {
        match backend {
            Backend::SparseLu => {
                let m = SparseColMat::<usize, f64>::try_new_from_triplets(a.n, a.n, &a.triplets())
                    .map_err(|e| Error::LinearSolver(format!("assembly: {e:?}")))?;
                let symbolic = match cache {
                    Some(c) => {
                        let (ptr, idx, sym) = c.cell.get_or_init(|| {
                            let sym =
                                SymbolicLu::try_new(m.symbolic()).expect("symbolic LU analysis");
                            (a.row_ptr.clone(), a.cols.clone(), sym)
                        });
                        (ptr == &a.row_ptr && idx == &a.cols).then(|| sym.clone())
                    }
                    None => None,
                };
                let lu = match symbolic {
                    Some(sym) => Lu::try_new_with_symbolic(sym, m.as_ref()),
                    None => m.sp_lu(),
                }
                .map_err(|e| Error::LinearSolver(format!("factorisation: {e:?}")))?;
                Ok(Factorized::Direct(Box::new(lu)))
            }
            Backend::BiCgStab => {
                let inv_diag = a
                    .diagonal()
                    .into_iter()
                    .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
                    .collect();
                Ok(Factorized::Iterative {
                    a: a.clone(),
                    inv_diag,
                })
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(b, false)
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(b, true)
    }

    fn solve_impl(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let x = match self {
            Factorized::Direct(lu) => {
                let mut rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
                if transpose {
                    lu.solve_transpose_in_place(rhs.as_mut());
                } else {
                    lu.solve_in_place(rhs.as_mut());
                }
                (0..b.len()).map(|i| rhs[(i, 0)]).collect::<Vec<_>>()
            }
            Factorized::Iterative { a, inv_diag } => {
                let op = |v: &[f64]| {
                    if transpose {
                        a.matvec_transpose(v)
                    } else {
                        a.matvec(v)
                    }
                };
                bicgstab(op, inv_diag, b, 1e-14, 20 * b.len().max(50))?
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolver("non-finite solution".into()));
        }
        Ok(x)
    }
}

/// Right-preconditioned BiCGStab with a diagonal preconditioner.
fn bicgstab<F>(op: F, inv_diag: &[f64], b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(inv_diag).map(|(a, d)| a * d).collect() };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut best = f64::INFINITY;
    for _ in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let phat = precond(&p);
        v = op(&phat);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
        let shat = precond(&s);
        let t = op(&shat);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        let rn = dot(&r, &r).sqrt() / bnorm;
        best = best.min(rn);
        if rn <= rtol {
            return Ok(x);
        }
        if omega == 0.0 || !rn.is_finite() {
            break;
        }
    }
    // Accept stagnation at round-off level.
    let res: Vec<f64> = op(&x).iter().zip(b).map(|(a, c)| c - a).collect();
    let rn = dot(&res, &res).sqrt() / bnorm;
    if rn <= 1e-11 {
        Ok(x)
    } else {
        Err(Error::LinearSolver(format!(
            "BiCGStab stalled at relative residual {rn:.3e} (best {best:.3e})"
        )))
    }
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite operator given as a closure.
pub fn conjugate_gradient<F>(
    op: F,
    diag: &[f64],
    b: &[f64],
    atol: f64,
    max_iter: usize,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if inf(&r) <= atol {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap = op(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if inf(&r) <= atol {
            // Recompute the true residual to guard against drift.
            let true_r: Vec<f64> = op(&x).iter().zip(b).map(|(a, c)| c - a).collect();
            if inf(&true_r) <= atol {
                return Ok(x);
            }
            r = true_r;
        }
        z = r.iter().zip(diag).map(|(a, d)| a / d).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolver(format!(
        "conjugate gradients did not reach {atol:.1e} in {max_iter} iterations"
    )))
}
