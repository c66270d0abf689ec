//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A measurement column carries no usable information (constant, or fewer
    /// than two distinct values).
    #[error("degenerate measurement: {0}")]
    DegenerateMeasurement(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// The influence-function machinery would exceed the configured dimension
    /// guard (its working matrices are quadratic in K*l squared).
    #[error("memory budget exceeded: {0}")]
    MemoryBudget(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("negative variance: {0}")]
    NegativeVariance(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("benchmark failure: {0}")]
    BenchmarkFailure(String),

    #[error("model file error: {0}")]
    ModelFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
