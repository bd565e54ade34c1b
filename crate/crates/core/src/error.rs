use thiserror::Error;

/// Errors raised by the solvers and configuration layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("kernel too narrow: {param} = {value} is below the grid spacing {spacing}")]
    KernelTooNarrow {
        param: &'static str,
        value: f64,
        spacing: f64,
    },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error(
        "potential domain violation: |s| = {value} is not inside (-{half_width}, {half_width})"
    )]
    DomainViolation { value: f64, half_width: f64 },

    #[error("potential domain is empty")]
    EmptyPotentialDomain,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("root solve did not converge at s = {0}")]
    RootSolve(f64),

    #[error("quadrature did not reach tolerance on [0, {0}]")]
    Quadrature(f64),

    #[error("linear solver failure: {0}")]
    LinearSolver(String),

    #[error("Newton iteration did not converge at step {step} (residual {residual:.3e} after {iterations} iterations); try a smaller dt")]
    NewtonFailure {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("separation breach at step {step}: max |phi| = {max_abs} reached the potential bound {half_width}")]
    SeparationBreach {
        step: usize,
        max_abs: f64,
        half_width: f64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("inverted bounds: {0}")]
    InvertedBounds(String),

    #[error("admissible set looks empty: box and H1 ball do not meet (gap {gap:.3e})")]
    EmptyIntersection { gap: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("optimizer line search exhausted at iteration {0}")]
    LineSearch(usize),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("assumption violations:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
