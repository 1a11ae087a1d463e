use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An index or count was outside its permitted range.
    #[error("out of bounds: {0}")]
    Bounds(String),

    /// A hyperparameter or run configuration was invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data could not be ingested or is unusable.
    #[error("data error: {0}")]
    Data(String),

    /// A model could not be fit to the supplied data.
    #[error("fit error: {0}")]
    Fit(String),

    /// The model lacks a capability the caller asked for (e.g. gradients).
    #[error("capability unavailable: {0}")]
    Capability(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for configuration
    /// problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Bounds(_) | Error::Config(_) | Error::Capability(_) => 2,
            Error::Data(_)
            | Error::Fit(_)
            | Error::Io { .. }
            | Error::Csv { .. }
            | Error::Json(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
