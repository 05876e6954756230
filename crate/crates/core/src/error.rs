use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero-norm vector encountered during {0}")]
    ZeroNorm(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty ensemble or measure")]
    Empty,

    #[error("non-finite state at step {step}: {what}")]
    NonFinite { step: usize, what: &'static str },

    #[error("softmax mass for candidate {candidate} underflowed to zero")]
    DegenerateSoftmax { candidate: usize },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("exponent overflow after max-shift")]
    Overflow,

    #[error("input mean {mean:e} is not zero under the reference measure")]
    NotMeanZero { mean: f64 },

    #[error("singular factorization: {0}")]
    Singular(&'static str),

    #[error("zero signal: {0}")]
    ZeroSignal(&'static str),

    #[error("CFL condition violated at t={t}: dt={dt:e} exceeds {limit:e} after 8 halvings")]
    Cfl { t: f64, dt: f64, limit: f64 },

    #[error("negative density value {value:e} at node {node}")]
    NegativeDensity { node: usize, value: f64 },

    #[error("objective diverged at training step {step}")]
    Diverged { step: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
