//! Error type shared by every module of the engine.

use thiserror::Error;

/// Errors raised by ingestion, estimation, search, governance and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// A column declared in the ingest config is missing from the input.
    #[error("schema error: column `{column}` not found")]
    MissingColumn { column: String },

    /// A cell could not be parsed or held a non-finite value.
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    /// The dataset violates a structural invariant (e.g. a user in two arms).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// An estimator was asked for an effect it has no data for.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// An argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Too few observations for a stability or robustness computation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A ranking or ground truth refers to something that does not exist.
    #[error("reference error: {0}")]
    Reference(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
