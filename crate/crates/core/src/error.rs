use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CrdError>;

#[derive(Debug, Error)]
pub enum CrdError {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("group must have exactly {expected} members, got {got}")]
    GroupSize { expected: usize, got: usize },

    #[error("population of {population} agents cannot form groups of {group}")]
    PopulationTooSmall { population: usize, group: usize },

    #[error("count out of range: {0}")]
    CountOutOfRange(String),

    #[error("non-finite propensity ({0}, {1})")]
    NonFinite(f64, f64),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("manifest does not match its embedded config: {0}")]
    ManifestMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CrdError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CrdError::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CrdError::Io {
            path: path.into(),
            source,
        }
    }
}
