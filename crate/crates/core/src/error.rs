use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported weight exponent p = {0} (need p > -1)")]
    UnsupportedExponent(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("ellipticity violated at ({lateral}, {normal}, t = {time}): {detail}")]
    Ellipticity {
        lateral: f64,
        normal: f64,
        time: f64,
        detail: String,
    },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("eigen solve failed: {0}")]
    Eigen(String),

    #[error("continuation diverged: distances non-decreasing for {steps} consecutive steps (last eps = {eps:e}, delta = {delta:e})")]
    Divergence { steps: usize, eps: f64, delta: f64 },

    #[error("cylinder escapes the domain: {0}")]
    CylinderOutside(String),

    #[error("unknown inequality id `{0}`")]
    UnknownInequality(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("config error (line {line}): {msg}")]
    Config { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
