use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: String, expected: String, actual: String },

    #[error("layer {index}: {source}")]
    Layer {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("forward cache does not match parameters: {0}")]
    CacheMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("eigensolver did not converge after {iterations} iterations (max residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: total loss {total}")]
    Diverged { epoch: usize, step: usize, total: f64, snapshot: Option<PathBuf> },

    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch { context: context.into(), expected: expected.to_string(), actual: actual.to_string() }
    }
}
