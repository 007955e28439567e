use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum GsError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file could not be decoded; `field` names the header field or table that failed.
    #[error("format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Structural invariant of a mask, grouping or encoded matrix does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Pruning could not honour the pattern constraints.
    #[error("pruning failed: {0}")]
    Pruning(String),
}

pub type Result<T> = std::result::Result<T, GsError>;

impl GsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        GsError::Format {
            field,
            detail: detail.into(),
        }
    }
}
