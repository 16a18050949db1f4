//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building spaces, weights, dependency
/// models, or estimates.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor was handed parameters outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An operation was called with an argument outside its domain
    /// (for example a quantile level outside [0, 1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// Mismatched vector dimensions.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A pilot run found the weight to be identically zero or non-finite, so
    /// the behavior it encodes has no mass under the input law.
    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    /// A self-normalizing ratio came out with a zero denominator, meaning the
    /// conditioning point or configuration cannot exhibit the behavior.
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    /// Accept-reject sampling would effectively never accept.
    #[error(
        "rejection starvation: acceptance rate {rate:.3e} below {floor:.0e} over a pilot of {pilot} draws"
    )]
    RejectionStarvation { rate: f64, floor: f64, pilot: usize },

    /// The empirical conditional CDF never reaches the requested level.
    #[error("conditional CDF does not bracket level {level}: {message}")]
    NonBracketing { level: f64, message: String },

    /// A model evaluation produced an error or a non-finite output.
    #[error("model evaluation failed at {point:?}: {message}")]
    ModelEval { point: Vec<f64>, message: String },

    /// A numeric intermediate that must be finite was not.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The external-model line protocol was violated.
    #[error("external model protocol error (request id {id}): {message}")]
    Protocol { id: u64, message: String },

    /// The external model did not answer within the deadline.
    #[error("external model timeout waiting for request id {0}")]
    Timeout(u64),

    /// The external model exited with a failure status.
    #[error("external model exited: {0}")]
    SubprocessExit(String),

    /// A run configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
