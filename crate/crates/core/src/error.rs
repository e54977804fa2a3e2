use thiserror::Error;

/// Errors produced by the preview engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("{0}")]
    Contract(String),

    #[error("scale {scale} does not divide grid {h}x{w}")]
    Divisibility { h: usize, w: usize, scale: usize },

    #[error("source index ({y}, {x}) outside {h}x{w} input")]
    OutOfBounds { y: usize, x: usize, h: usize, w: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite state at integration step {step}")]
    Integration { step: usize },

    #[error("training diverged at step {step} (loss {loss})")]
    Training { step: usize, loss: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
