use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("divergence undefined: q[{index}] = 0 where p[{index}] = {p}")]
    DivergenceUndefined { index: usize, p: f64 },

    #[error("gradient check failed: {0}")]
    CheckFailed(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("no reverse-question candidates: {0}")]
    EmptyCandidates(String),

    #[error("no assertable facts for a description: {0}")]
    EmptyDescription(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scorer error: {0}")]
    Scorer(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
