use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the memory, environment, learning and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or infeasible.
    #[error("invalid configuration at `{key}`: {message}")]
    Config { key: String, message: String },

    /// An API was called with arguments that violate its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// An entity or relation is not part of the vocabulary.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// A checkpoint could not be loaded against the current model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A line-oriented input file has a malformed record.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A policy or model kind name that is not recognized.
#[derive(Debug, Clone, Error)]
#[error("invalid {what}: {value}")]
pub struct ParseKindError {
    what: &'static str,
    value: String,
}

impl ParseKindError {
    pub(crate) fn new(what: &'static str, value: &str) -> Self {
        Self {
            what,
            value: value.to_owned(),
        }
    }
}
