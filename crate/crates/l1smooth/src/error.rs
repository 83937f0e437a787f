//! Error type shared across the solver crate.

use thiserror::Error;

/// Errors surfaced by model construction, smoothing, and the splitting drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0} not positive definite")]
    NotPositiveDefinite(String),

    #[error("singular innovation covariance at step {step}")]
    SingularInnovation { step: usize },

    #[error("singular predicted covariance at step {step}")]
    SingularPrediction { step: usize },

    #[error("non-finite trajectory")]
    NonFiniteTrajectory,

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("batch size limit: {size} stacked states exceeds limit {limit}; use recursive solver")]
    BatchLimit { size: usize, limit: usize },

    #[error("rank-deficient Gauss-Newton system")]
    RankDeficientGaussNewton,

    #[error("singular normal matrix in batch solve")]
    SingularNormalMatrix,

    #[error("stale cache: model or pseudo-measurement channel changed since precomputation")]
    StaleCache,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver diverged: {0}")]
    Diverged(String),

    #[error("zero denominator in relative error")]
    ZeroDenominator,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(String),
}

pub type Result<V> = std::result::Result<V, Error>;
