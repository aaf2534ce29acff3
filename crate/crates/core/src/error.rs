use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the depth-estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{axis} dimension {size} is not divisible by {divisor}")]
    NotDivisible {
        axis: &'static str,
        size: usize,
        divisor: usize,
    },

    #[error("window {0} is not aligned to stride {1}")]
    Misaligned(String, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("empty selection: {0}")]
    Empty(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("pixel ({x}, {y}) is not covered by any patch")]
    Uncovered { x: usize, y: usize },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("value {value} overflows 16-bit storage at scale {scale}")]
    Overflow { value: f64, scale: f64 },

    #[error("non-finite loss at step {step}")]
    Diverged { step: usize },

    #[error("missing artifact: {0}")]
    Missing(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
