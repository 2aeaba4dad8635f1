use thiserror::Error;

/// Errors raised by the simulation lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A scheme broke one of its own budget or cardinality invariants.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("theory precondition failed: {0}")]
    Precondition(String),

    #[error("missing constant `{0}` for this bound")]
    MissingConstant(&'static str),

    #[error("scheme `{0}` has no closed-form consistency constant (measured only)")]
    MeasuredOnly(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
