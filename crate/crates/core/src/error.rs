use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator and receiver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("length mismatch: {0}")]
    Length(String),

    #[error("pivot kernel {pivot} is numerically zero")]
    ZeroPivot { pivot: usize },

    #[error("zero reference energy")]
    ZeroReference,

    #[error(
        "mu table coverage incomplete: {missing} of {total} sequences unseen \
         (first missing: {first_missing:?}); try at least {suggested_training} training symbols"
    )]
    Coverage {
        missing: usize,
        total: usize,
        first_missing: Vec<usize>,
        suggested_training: usize,
    },

    #[error("block too large for exhaustive search: {0} hypotheses")]
    BlockTooLarge(u128),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
