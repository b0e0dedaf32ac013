use std::path::PathBuf;

/// Errors raised by grid construction, kernels and the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate measure: total mass is zero")]
    DegenerateMeasure,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("measures are defined on different grids")]
    GridMismatch,

    #[error(
        "epsilon too small for grid spacing: neighbouring-bin kernel entry \
         exp(-{exponent:.3e}) underflows at epsilon = {epsilon:e}"
    )]
    EpsilonTooSmall { epsilon: f64, exponent: f64 },

    #[error("dense kernel limited to {limit} bins, grid has {size}")]
    DenseLimit { limit: usize, size: usize },

    #[error("scaling blow-up at iteration {iteration}")]
    ScalingBlowUp { iteration: usize },

    #[error("zero entry in scaling vector at index {index}")]
    ZeroScaling { index: usize },

    #[error("perturbation of size {step:e} leaves the simplex interior")]
    LeavesSimplex { step: f64 },

    #[error("non-finite tangent at sweep {sweep}")]
    NonFiniteTangent { sweep: usize },

    #[error("bracket failure for {kind} equation on [{lo:e}, {hi:e}]: f(lo) = {f_lo:e}, f(hi) = {f_hi:e}")]
    BracketFailure {
        kind: &'static str,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
