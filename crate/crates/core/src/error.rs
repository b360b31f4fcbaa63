use alloc::string::String;

/// Errors raised by estimation, inference and certification routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("row {row} violates the zero-sum gauge (sum = {sum:e})")]
    GaugeViolation { row: usize, sum: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("rank deficient initializer (sigma_r = {0:e})")]
    RankDeficient(f64),
    #[error("insufficient connectivity in task {task}")]
    InsufficientConnectivity { task: usize },
    #[error("conjugate gradients stopped at relative residual {residual:e} after {iterations} iterations")]
    CgNotConverged { residual: f64, iterations: usize },
    #[error("degenerate contrast {0}: zero standard error")]
    DegenerateContrast(usize),
    #[error("objective became non-finite at iteration {iteration} (step {step:e}, objective {objective})")]
    Diverged {
        iteration: usize,
        step: f64,
        objective: f64,
    },
    #[error("{0} failed")]
    Decomposition(&'static str),
    #[error("contrast family of size {size} exceeds the limit of {limit}; use a per-model scope")]
    FamilyTooLarge { size: usize, limit: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
