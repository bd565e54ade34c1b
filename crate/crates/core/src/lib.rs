//! Viscous non-local Cahn-Hilliard tumour growth with nutrient coupling:
//! forward simulation, tangent and adjoint sensitivities, and projected
//! gradient optimisation of radiotherapy and nutrient supply.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod adjoint;
pub mod control;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod potential;
pub mod projection;
pub mod scenario;
pub mod state;
pub mod tangent;

pub use adjoint::{
    cost, AdjointSnapshot, AdjointTrajectory, CostWeights, Evaluation, Forward, ReducedProblem,
    TargetData,
};
pub use control::{h1_time_norm, AdmissibleSet, ControlPair};
pub use error::{Error, Result};
pub use grid::{
    h1_seminorm_sq, inner, laplacian_neumann, GridSpec, ScalarField, SpaceTimeField, TimeGrid,
};
pub use kernel::{KernelSpec, KernelTable};
pub use model::{ModelParams, Profile};
pub use optimizer::{
    fd_gradient_oracle, optimize, random_direction, random_feasible,
    sampled_variational_inequality, FdReport, IterationRecord, OptimizeResult, OptimizerConfig,
};
pub use par::Execution;
pub use potential::{PotentialSpec, YosidaParams};
pub use projection::{
    project_u, project_u_dykstra, project_u_exact, project_v, ProjectionConfig, ProjectionMethod,
};
pub use scenario::{AuditItem, FieldInput, FieldSpec, Scenario};
pub use state::{
    continuous_dependence, energy, energy_residuals, initial_mu, mass_residuals, separation_report,
    simulate, simulate_forced, step, DependenceSample, Model, Monitor, NewtonConfig,
    SeparationReport, StateSnapshot, StepForcing, Trajectory,
};
pub use tangent::{
    tangent_solve, tangent_step, taylor_test, ControlPerturbation, LinearisedSnapshot,
    Linearization, TaylorReport,
};
