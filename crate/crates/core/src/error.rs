use thiserror::Error;

pub type Result<T> = std::result::Result<T, AfpError>;

#[derive(Debug, Error)]
pub enum AfpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("component index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value at iteration {k}: {what}")]
    Numerical { k: usize, what: String },

    #[error("staleness of component {index} reached {staleness} at iteration {k}, cap is {cap}")]
    Staleness {
        index: usize,
        k: usize,
        staleness: usize,
        cap: usize,
    },

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("oracle failed at iteration {k}: {source}")]
    Oracle {
        k: usize,
        #[source]
        source: Box<AfpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
