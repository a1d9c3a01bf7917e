use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the load-profile clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("profile cannot be normalised with {method}: {reason}")]
    Unnormalisable { method: String, reason: String },

    #[error("clusters {a} and {b} have identical centroids")]
    DuplicateCentroids { a: usize, b: usize },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
