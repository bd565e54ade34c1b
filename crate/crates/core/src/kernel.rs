//! Non-local interaction kernels `J` and the discrete convolution
//! `(J * f)(x) = int_Omega J(x - y) f(y) dy`.
//!
//! The convolution is linear (not circular): weights are sampled on the
//! lattice of cell-centre differences and applied through a zero-padded FFT,
//! so no mass wraps around the boundary.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::model::ModelParams;
use crate::par;
use crate::potential::PotentialSpec;

/// Kernel family. All families are even and nonnegative on `Omega - Omega`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Normalised Gaussian of standard deviation `width`.
    Gaussian { width: f64 },
    /// `J == value`.
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// Newton kernel of the ambient dimension, shifted by a constant so it is
    /// nonnegative on the domain and clamped at `|z| < delta`.
    TruncatedNewton { delta: f64 },
    /// Normalised bump function supported in `|z| < epsilon`.
    Mollifier { epsilon: f64 },
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    fn check(&self, grid: &GridSpec) -> Result<()> {
        let h = grid.min_spacing();
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidKernel(format!(
                    "{name} = {v} must be positive"
                )))
            }
        };
        match *self {
            KernelSpec::Gaussian { width } => {
                positive("width", width)?;
                if width < h {
                    return Err(Error::KernelTooNarrow {
                        param: "width",
                        value: width,
                        spacing: h,
                    });
                }
            }
            KernelSpec::Constant { value } => positive("value", value)?,
            KernelSpec::TruncatedNewton { delta } => positive("delta", delta)?,
            KernelSpec::Mollifier { epsilon } => {
                positive("epsilon", epsilon)?;
                if epsilon < h {
                    return Err(Error::KernelTooNarrow {
                        param: "epsilon",
                        value: epsilon,
                        spacing: h,
                    });
                }
            }
        }
        Ok(())
    }

    /// Kernel value at displacement `z` for a domain of dimension `dim` and
    /// diameter `diameter`.
    pub fn eval(&self, z: [f64; 2], dim: usize, diameter: f64) -> f64 {
        let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
        let d = dim as i32;
        match *self {
            KernelSpec::Gaussian { width } => {
                let norm = (2.0 * PI * width * width).powf(-(dim as f64) / 2.0);
                norm * (-r * r / (2.0 * width * width)).exp()
            }
            KernelSpec::Constant { value } => value,
            KernelSpec::TruncatedNewton { delta } => {
                let rr = r.max(delta);
                let big = diameter.max(delta);
                if dim == 1 {
                    0.5 * (big - rr)
                } else {
                    (big / rr).ln() / (2.0 * PI)
                }
            }
            KernelSpec::Mollifier { epsilon } => {
                let t = r / epsilon;
                if t >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - t * t)).exp() / (bump_mass(dim) * epsilon.powi(d))
                }
            }
        }
    }

    /// Which regularity class of the strong theory the family falls into.
    pub fn admissibility(&self) -> Admissibility {
        match self {
            KernelSpec::TruncatedNewton { .. } => Admissibility {
                w21_loc: false,
                admissible_class: true,
                note: "Newton-type kernel; admissibility recorded, not re-verified",
            },
            _ => Admissibility {
                w21_loc: true,
                admissible_class: false,
                note: "smooth kernel in W^{2,1}_loc",
            },
        }
    }
}

/// Regularity metadata for a kernel family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility {
    pub w21_loc: bool,
    pub admissible_class: bool,
    pub note: &'static str,
}

/// Mass of the unscaled bump `exp(-1/(1-|x|^2))` on the unit ball of R^dim.
fn bump_mass(dim: usize) -> f64 {
    static MASS: OnceLock<[f64; 2]> = OnceLock::new();
    let m = MASS.get_or_init(|| {
        let n = 20_000;
        let f1 = |x: f64| {
            if x.abs() >= 1.0 {
                0.0
            } else {
                (-1.0 / (1.0 - x * x)).exp()
            }
        };
        let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(a + k as f64 * h);
            }
            s * h / 3.0
        };
        let one_d = simpson(&f1, -1.0, 1.0);
        let two_d = 2.0 * PI * simpson(&|r: f64| r * f1(r), 0.0, 1.0);
        [one_d, two_d]
    });
    m[dim - 1]
}

/// Precomputed discrete convolution data for one kernel on one grid.
pub struct KernelTable {
    spec: KernelSpec,
    grid: GridSpec,
    fft: FftPlan,
    spectrum: Vec<Complex64>,
    a_field: ScalarField,
    a_star: f64,
    b_const: f64,
}

impl std::fmt::Debug for KernelTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelTable")
            .field("spec", &self.spec)
            .field("grid", &self.grid)
            .field("a_star", &self.a_star)
            .field("b_const", &self.b_const)
            .finish()
    }
}

struct FftPlan {
    px: usize,
    py: usize,
    fx: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
}

impl FftPlan {
    fn new(grid: &GridSpec) -> Self {
        let px = 2 * grid.nx();
        let py = if grid.dim() == 2 { 2 * grid.ny() } else { 1 };
        let mut planner = FftPlanner::new();
        Self {
            px,
            py,
            fx: planner.plan_fft_forward(px),
            ix: planner.plan_fft_inverse(px),
            fy: planner.plan_fft_forward(py),
            iy: planner.plan_fft_inverse(py),
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (px, py) = (self.px, self.py);
        let (tx, ty) = if inverse {
            (&self.ix, &self.iy)
        } else {
            (&self.fx, &self.fy)
        };
        par::for_each_chunk_mut(buf, px, |_, row| tx.process(row));
        if py > 1 {
            let mut cols = vec![Complex64::new(0.0, 0.0); px * py];
            for j in 0..py {
                for i in 0..px {
                    cols[i * py + j] = buf[j * px + i];
                }
            }
            par::for_each_chunk_mut(&mut cols, py, |_, col| ty.process(col));
            for j in 0..py {
                for i in 0..px {
                    buf[j * px + i] = cols[i * py + j];
                }
            }
        }
    }
}

/// Lattice weights `w(d) = J(d h) * vol` placed at wrapped offsets of the
/// padded buffer, then transformed.
fn kernel_spectrum<F>(grid: &GridSpec, plan: &FftPlan, sample: F) -> Result<Vec<Complex64>>
where
    F: Fn([f64; 2]) -> f64,
{
    let (nx, ny) = (grid.nx() as isize, grid.ny() as isize);
    let (px, py) = (plan.px as isize, plan.py as isize);
    let hx = grid.spacing(0);
    let hy = if grid.dim() == 2 {
        grid.spacing(1)
    } else {
        0.0
    };
    let vol = grid.cell_volume();
    let mut buf = vec![Complex64::new(0.0, 0.0); (px * py) as usize];
    for dj in -(ny - 1)..ny {
        for di in -(nx - 1)..nx {
            let w = sample([di as f64 * hx, dj as f64 * hy]) * vol;
            if !w.is_finite() {
                return Err(Error::NonFinite(format!(
                    "kernel sample at offset ({di}, {dj})"
                )));
            }
            let i = di.rem_euclid(px) as usize;
            let j = dj.rem_euclid(py) as usize;
            buf[j * px as usize + i] = Complex64::new(w, 0.0);
        }
    }
    plan.transform(&mut buf, false);
    Ok(buf)
}

fn apply_spectrum(grid: &GridSpec, plan: &FftPlan, spectrum: &[Complex64], f: &[f64]) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (px, py) = (plan.px, plan.py);
    let mut buf = vec![Complex64::new(0.0, 0.0); px * py];
    for j in 0..ny {
        for i in 0..nx {
            buf[j * px + i] = Complex64::new(f[j * nx + i], 0.0);
        }
    }
    plan.transform(&mut buf, false);
    par::for_each_mut(&mut buf, |k, z| *z *= spectrum[k]);
    plan.transform(&mut buf, true);
    let scale = 1.0 / (px * py) as f64;
    let mut out = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            out[j * nx + i] = buf[j * px + i].re * scale;
        }
    }
    out
}

impl KernelTable {
    pub fn build(spec: KernelSpec, grid: &GridSpec) -> Result<Self> {
        spec.check(grid)?;
        let dim = grid.dim();
        let ext = grid.extent();
        let diameter = if dim == 2 {
            ext[0].hypot(ext[1])
        } else {
            ext[0]
        };
        let plan = FftPlan::new(grid);
        let j = |z: [f64; 2]| spec.eval(z, dim, diameter);
        let spectrum = kernel_spectrum(grid, &plan, j)?;

        let ones = vec![1.0; grid.len()];
        let a_vals = apply_spectrum(grid, &plan, &spectrum, &ones);
        let abs_spectrum = kernel_spectrum(grid, &plan, |z| j(z).abs())?;
        let a_star = apply_spectrum(grid, &plan, &abs_spectrum, &ones)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);

        let hx = grid.spacing(0);
        let hy = if dim == 2 { grid.spacing(1) } else { 0.0 };
        let grad_abs = |z: [f64; 2]| {
            let gx = (j([z[0] + hx, z[1]]) - j([z[0] - hx, z[1]])) / (2.0 * hx);
            let gy = if dim == 2 {
                (j([z[0], z[1] + hy]) - j([z[0], z[1] - hy])) / (2.0 * hy)
            } else {
                0.0
            };
            gx.hypot(gy)
        };
        let grad_spectrum = kernel_spectrum(grid, &plan, grad_abs)?;
        let b_const = apply_spectrum(grid, &plan, &grad_spectrum, &ones)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);

        let a_field = ScalarField::from_values(grid, a_vals)?;
        Ok(Self {
            spec,
            grid: *grid,
            fft: plan,
            spectrum,
            a_field,
            a_star,
            b_const,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `a(x) = (J * 1)(x)`.
    pub fn a_field(&self) -> &ScalarField {
        &self.a_field
    }

    /// `sup_x int_Omega |J(x - y)| dy`.
    pub fn a_star(&self) -> f64 {
        self.a_star
    }

    /// `sup_x int_Omega |grad J(x - y)| dy`, from centred differences of J.
    /// Diagnostic only.
    pub fn b_const(&self) -> f64 {
        self.b_const
    }

    pub fn convolve(&self, f: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(f.grid())?;
        Ok(self.convolve_unchecked(f))
    }

    pub(crate) fn convolve_unchecked(&self, f: &ScalarField) -> ScalarField {
        let out = apply_spectrum(&self.grid, &self.fft, &self.spectrum, f.values());
        ScalarField::from_raw(self.grid, out)
    }

    /// Minimum of `A F''(s) + B a(x)` over sampled `s` and cells.
    pub fn check_coercivity(
        &self,
        potential: &PotentialSpec,
        params: &ModelParams,
    ) -> Result<CoercivityReport> {
        const SAMPLES: usize = 4001;
        let (lo, hi) = potential.sampling_interval();
        if !(lo < hi) {
            return Err(Error::EmptyPotentialDomain);
        }
        let mut min_f2 = f64::INFINITY;
        let mut argmin = lo;
        for k in 0..SAMPLES {
            let s = lo + (hi - lo) * k as f64 / (SAMPLES - 1) as f64;
            let v = potential.eval(2, s)?;
            if v < min_f2 {
                min_f2 = v;
                argmin = s;
            }
        }
        let min_a = self.a_field.min();
        let c0 = params.a * min_f2 + params.b * min_a;
        let chi_sq = params.chi * params.chi;
        Ok(CoercivityReport {
            c0,
            chi_sq,
            min_f2,
            argmin_f2: argmin,
            min_a,
            sample_interval: (lo, hi),
            samples: SAMPLES,
            passes: c0 > chi_sq,
        })
    }
}

/// Outcome of the `A F'' + B a >= c0 > chi^2` check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityReport {
    pub c0: f64,
    pub chi_sq: f64,
    pub min_f2: f64,
    pub argmin_f2: f64,
    pub min_a: f64,
    /// Interval of `s` sampled uniformly with `samples` points.
    pub sample_interval: (f64, f64),
    pub samples: usize,
    pub passes: bool,
}
