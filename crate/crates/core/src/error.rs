use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the adaptation engine and its file formats.
#[derive(Debug, Error)]
pub enum TaeaError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("degenerate vector: norm {norm:e} is below {min:e}")]
    Degenerate { norm: f64, min: f64 },

    #[error("invalid distribution: {0}")]
    Domain(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{path}: bad format: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: corrupt file: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: manifest schema error: {msg}")]
    Schema { path: PathBuf, msg: String },

    #[error("inconsistent dataset: {0}")]
    Consistency(String),

    #[error("support set is empty")]
    EmptySupport,
}

impl TaeaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TaeaError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = TaeaError> = std::result::Result<T, E>;
