use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at layer {layer}: expected {expected}, got {got}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid action for {env}: {detail}")]
    InvalidAction { env: String, detail: String },

    #[error("invalid state for {env}: {detail}")]
    InvalidState { env: String, detail: String },

    #[error("environment mismatch: expected {expected}, got {got}")]
    EnvMismatch { expected: String, got: String },

    #[error("task filter rejected {0} consecutive draws")]
    FilterExhausted(u64),

    #[error("expert cannot act: {0}")]
    Expert(String),

    #[error("non-finite value during {stage}: {detail}")]
    NonFinite { stage: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
