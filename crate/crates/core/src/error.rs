use thiserror::Error;

/// Errors raised by the density, covariance, loss and fitting routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid scale configuration: {0}")]
    InvalidConfig(String),

    #[error("variance must be positive and finite, got {0}")]
    NonPositiveVariance(f64),

    #[error("cell index {index} out of range for a grid of {len} cells")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("grid mismatch: expected scale {expected_scale} ({expected_w}x{expected_h}), got scale {actual_scale} ({actual_w}x{actual_h})")]
    GridMismatch {
        expected_scale: usize,
        expected_w: usize,
        expected_h: usize,
        actual_scale: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("expected {expected} scales, got {actual}")]
    ScaleCountMismatch { expected: usize, actual: usize },

    #[error("matrix is not positive definite (last diagonal jitter tried: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("dense path is limited to {limit} cells, grid has {cells}")]
    TooLarge { cells: usize, limit: usize },

    #[error("at least two Monte-Carlo samples are required, got {0}")]
    TooFewSamples(usize),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
