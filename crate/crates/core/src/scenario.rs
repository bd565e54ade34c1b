//! Scenario files: TOML text binding grid, model, initial data, cost, control
//! sets and optimizer settings, validated at load with assumption labels.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::adjoint::{CostWeights, ReducedProblem, TargetData};
use crate::control::{AdmissibleSet, ControlPair};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, SpaceTimeField, TimeGrid};
use crate::io;
use crate::kernel::{CoercivityReport, KernelSpec, KernelTable};
use crate::model::ModelParams;
use crate::optimizer::OptimizerConfig;
use crate::potential::PotentialSpec;
use crate::state::{Model, NewtonConfig};

/// Scalar field description: a number, an analytic preset or a file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum FieldInput {
    Value(f64),
    Spec(FieldSpec),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    /// `outside + (inside - outside) (1 - tanh((r - radius) / width)) / 2`,
    /// `r` the distance to `center` (domain centre by default).
    Bump {
        inside: f64,
        outside: f64,
        radius: f64,
        width: f64,
        center: Option<Vec<f64>>,
    },
    /// `mean + amplitude cos(k_x pi x / L_x) cos(k_y pi y / L_y)`.
    Cosine {
        mean: f64,
        amplitude: f64,
        modes: Vec<u32>,
    },
    /// Cell values uniform in `mean +- amplitude`, drawn from the scenario
    /// seed plus `stream`.
    Random {
        mean: f64,
        amplitude: f64,
        #[serde(default)]
        stream: u64,
    },
    /// First snapshot of a `raw64` file, relative to the scenario file.
    File {
        path: PathBuf,
    },
}

impl FieldInput {
    fn resolve(&self, grid: &GridSpec, seed: u64, base: &Path) -> Result<ScalarField> {
        match self {
            FieldInput::Value(v) => Ok(ScalarField::constant(grid, *v)),
            FieldInput::Spec(s) => s.resolve(grid, seed, base),
        }
    }
}

impl FieldSpec {
    fn resolve(&self, grid: &GridSpec, seed: u64, base: &Path) -> Result<ScalarField> {
        let ext = grid.extent();
        match self {
            FieldSpec::Constant { value } => Ok(ScalarField::constant(grid, *value)),
            FieldSpec::Bump {
                inside,
                outside,
                radius,
                width,
                center,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "bump width must be positive (got {width})"
                    )));
                }
                let c = match center {
                    Some(c) if c.len() == grid.dim() => [c[0], c.get(1).copied().unwrap_or(0.0)],
                    Some(c) => {
                        return Err(Error::InvalidArgument(format!(
                            "bump center has {} coordinates on a {}D grid",
                            c.len(),
                            grid.dim()
                        )))
                    }
                    None => [
                        0.5 * ext[0],
                        if grid.dim() == 2 { 0.5 * ext[1] } else { 0.0 },
                    ],
                };
                Ok(ScalarField::from_fn(grid, |x| {
                    let r = (x[0] - c[0]).hypot(x[1] - c[1]);
                    outside + (inside - outside) * 0.5 * (1.0 - ((r - radius) / width).tanh())
                }))
            }
            FieldSpec::Cosine {
                mean,
                amplitude,
                modes,
            } => {
                if modes.len() != grid.dim() {
                    return Err(Error::InvalidArgument(format!(
                        "cosine preset needs {} modes, got {}",
                        grid.dim(),
                        modes.len()
                    )));
                }
                let ky = modes.get(1).copied().unwrap_or(0) as f64;
                let kx = modes[0] as f64;
                Ok(ScalarField::from_fn(grid, |x| {
                    let cy = if grid.dim() == 2 {
                        (ky * PI * x[1] / ext[1]).cos()
                    } else {
                        1.0
                    };
                    mean + amplitude * (kx * PI * x[0] / ext[0]).cos() * cy
                }))
            }
            FieldSpec::Random {
                mean,
                amplitude,
                stream,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(*stream));
                let a = amplitude.abs();
                let v = (0..grid.len())
                    .map(|_| {
                        if a > 0.0 {
                            mean + rng.gen_range(-a..=a)
                        } else {
                            *mean
                        }
                    })
                    .collect();
                ScalarField::from_values(grid, v)
            }
            FieldSpec::File { path } => {
                let p = base.join(path);
                io::read_fields(&p, grid)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Format(format!("{}: no snapshots", p.display())))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    dim: usize,
    extent: Vec<f64>,
    cells: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeSection {
    horizon: f64,
    steps: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    phi: FieldInput,
    sigma: FieldInput,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ControlSection {
    u: FieldInput,
    v: FieldInput,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            u: FieldInput::Value(0.0),
            v: FieldInput::Value(0.0),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TargetSection {
    phi_omega: FieldInput,
    sigma_omega: FieldInput,
    phi_q: FieldInput,
    sigma_q: FieldInput,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            phi_omega: FieldInput::Value(0.0),
            sigma_omega: FieldInput::Value(0.0),
            phi_q: FieldInput::Value(0.0),
            sigma_q: FieldInput::Value(0.0),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetSection {
    u_min: FieldInput,
    u_max: FieldInput,
    v_min: FieldInput,
    v_max: FieldInput,
    radius: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    seed: u64,
    grid: GridSection,
    time: TimeSection,
    #[serde(default)]
    params: ModelParams,
    kernel: KernelSpec,
    #[serde(default)]
    potential: PotentialSpec,
    #[serde(default)]
    newton: NewtonConfig,
    initial: InitialSection,
    #[serde(default)]
    controls: ControlSection,
    #[serde(default)]
    weights: CostWeights,
    #[serde(default)]
    targets: TargetSection,
    sets: SetSection,
    #[serde(default)]
    optimizer: OptimizerConfig,
}

/// One line of the assumption audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditItem {
    pub label: &'static str,
    pub ok: bool,
    pub detail: String,
}

/// A loaded and validated scenario.
#[derive(Debug)]
pub struct Scenario {
    pub seed: u64,
    pub time: TimeGrid,
    pub model: Model,
    pub phi0: ScalarField,
    pub sigma0: ScalarField,
    /// Initial guess for the optimizer and the controls used by `simulate`.
    pub controls: ControlPair,
    pub weights: CostWeights,
    pub targets: TargetData,
    pub sets: AdmissibleSet,
    pub optimizer: OptimizerConfig,
    pub coercivity: CoercivityReport,
    pub audit: Vec<AuditItem>,
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let (line, column) = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |k| k + 1) + 1;
            (line, column)
        }
        None => (0, 0),
    };
    Error::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

fn space_time(f: &ScalarField, time: &TimeGrid) -> SpaceTimeField {
    SpaceTimeField::repeated(f, time)
}

impl Scenario {
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base, seed)
    }

    /// Parses scenario text; relative file paths resolve against `base`.
    /// `seed` overrides the file's seed.
    pub fn parse(text: &str, base: &Path, seed: Option<u64>) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        let seed = seed.unwrap_or(file.seed);
        let mut audit = Vec::new();
        let mut check = |label: &'static str, ok: bool, detail: String| {
            audit.push(AuditItem { label, ok, detail });
        };

        let grid = GridSpec::new(file.grid.dim, &file.grid.extent, &file.grid.cells)
            .map_err(|e| Error::Validation(vec![format!("grid: {e}")]))?;
        let time = TimeGrid::new(file.time.horizon, file.time.steps)
            .map_err(|e| Error::Validation(vec![format!("time: {e}")]))?;

        let pv = file.params.violations();
        for v in &pv {
            check(label_of(v), false, v.clone());
        }
        if pv.is_empty() {
            check("A1", true, "A, B, tau > 0 and chi >= 0".into());
            check(
                "A5",
                true,
                format!("P >= P0 = {} > 0", file.params.proliferation.floor()),
            );
            check("A6", true, "m, n > 0".into());
            check("B3", true, "P, h bounded with bounded derivatives".into());
            check("C4", true, "P, h are C2 with bounded derivatives".into());
        }
        match file.potential.validate() {
            Ok(()) => check("A3", true, format!("{:?}", file.potential)),
            Err(e) => check("A3", false, e),
        }

        let phi0 = file.initial.phi.resolve(&grid, seed, base)?;
        let sigma0 = file.initial.sigma.resolve(&grid, seed, base)?;
        let l = file.potential.half_width();
        let sup = phi0.max_abs();
        check(
            "A8",
            phi0.is_finite() && sigma0.is_finite() && sup <= l,
            format!("phi0 finite with F(phi0) integrable (max |phi0| = {sup})"),
        );
        check(
            "B5",
            phi0.is_finite() && sigma0.is_finite() && sup < l,
            format!(
                "phi0 separated: max |phi0| = {sup} < {l}; sigma0 bounded by {}",
                sigma0.max_abs()
            ),
        );

        let kernel = match KernelTable::build(file.kernel, &grid) {
            Ok(k) => {
                let adm = file.kernel.admissibility();
                check(
                    "A2",
                    true,
                    format!(
                        "{:?}: a* = {:.6e}, b = {:.6e}",
                        file.kernel,
                        k.a_star(),
                        k.b_const()
                    ),
                );
                check(
                    "B1",
                    adm.w21_loc || adm.admissible_class,
                    adm.note.to_string(),
                );
                Some(k)
            }
            Err(e) => {
                check("A2", false, e.to_string());
                None
            }
        };
        let coercivity = match (&kernel, file.potential.validate()) {
            (Some(k), Ok(())) => {
                let r = k.check_coercivity(&file.potential, &file.params)?;
                check(
                    "A4",
                    r.c0 > 0.0,
                    format!("A F'' + B a >= c0 = {:.6e} > 0", r.c0),
                );
                check(
                    "B2",
                    r.c0 > r.chi_sq,
                    format!("c0 = {:.6e} > chi^2 = {:.6e}", r.c0, r.chi_sq),
                );
                Some(r)
            }
            _ => None,
        };

        let u0 = file.controls.u.resolve(&grid, seed, base)?;
        let v0 = file.controls.v.resolve(&grid, seed, base)?;
        let controls_ok = u0.is_finite() && v0.is_finite();
        check("B4", controls_ok, "initial controls bounded".into());

        for v in file.weights.violations() {
            check("C1", false, v);
        }
        if file.weights.violations().is_empty() {
            check("C1", true, "weights nonnegative, not all zero".into());
        }

        let t = &file.targets;
        let targets = TargetData {
            phi_omega: t.phi_omega.resolve(&grid, seed, base)?,
            sigma_omega: t.sigma_omega.resolve(&grid, seed, base)?,
            phi_q: space_time(&t.phi_q.resolve(&grid, seed, base)?, &time),
            sigma_q: space_time(&t.sigma_q.resolve(&grid, seed, base)?, &time),
        };
        let targets_ok = targets.phi_omega.is_finite()
            && targets.sigma_omega.is_finite()
            && targets.phi_q.is_finite()
            && targets.sigma_q.is_finite();
        check("C2", targets_ok, "targets finite".into());

        let s = &file.sets;
        let sets = AdmissibleSet {
            u_min: space_time(&s.u_min.resolve(&grid, seed, base)?, &time),
            u_max: space_time(&s.u_max.resolve(&grid, seed, base)?, &time),
            v_min: space_time(&s.v_min.resolve(&grid, seed, base)?, &time),
            v_max: space_time(&s.v_max.resolve(&grid, seed, base)?, &time),
            radius: s.radius,
        };
        let sv = sets.violations();
        for v in &sv {
            check("C3", false, v.clone());
        }
        if sv.is_empty() {
            check(
                "C3",
                true,
                format!("bounds ordered, u_min >= 0, M = {}", sets.radius),
            );
        }
        for v in file.optimizer.violations() {
            check("optimizer", false, v);
        }
        if !(file.newton.tol > 0.0 && file.newton.max_iter > 0) {
            check(
                "newton",
                false,
                "newton: tol and max_iter must be positive".into(),
            );
        }

        let bad: Vec<String> = audit
            .iter()
            .filter(|a| !a.ok)
            .map(|a| labelled(a.label, &a.detail))
            .collect();
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let mut model = Model::new(file.params, file.potential, kernel.expect("validated"))?;
        model.newton = file.newton;
        let controls = ControlPair::new(space_time(&u0, &time), space_time(&v0, &time))?;
        Ok(Self {
            seed,
            time,
            model,
            phi0,
            sigma0,
            controls,
            weights: file.weights,
            targets,
            sets,
            optimizer: file.optimizer,
            coercivity: coercivity.expect("validated"),
            audit,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.model.grid()
    }

    pub fn problem(&self) -> ReducedProblem<'_> {
        ReducedProblem {
            model: &self.model,
            phi0: &self.phi0,
            sigma0: &self.sigma0,
            time: self.time,
            weights: self.weights,
            targets: &self.targets,
        }
    }
}

fn label_of(msg: &str) -> &'static str {
    for l in [
        "A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "B1", "B2", "B3", "B4", "B5", "C1", "C2",
        "C3", "C4",
    ] {
        if msg.starts_with(l) {
            return l;
        }
    }
    "config"
}

fn labelled(label: &str, detail: &str) -> String {
    if detail.starts_with(label) {
        detail.to_string()
    } else {
        format!("{label}: {detail}")
    }
}
