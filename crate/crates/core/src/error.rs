use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("node index {index} exceeds declared node count {n}")]
    Bounds { index: usize, n: usize },

    #[error("replay buffer holds {available} transitions, {requested} requested")]
    NotReady { available: usize, requested: usize },

    #[error("training diverged: {what}{}", last_good.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    Divergence {
        what: String,
        last_good: Option<PathBuf>,
    },

    #[error("numerical guard: {0}")]
    Numerical(String),

    #[error("checkpoint integrity error in array `{array}`: {message}")]
    Integrity { array: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn divergence(what: impl Into<String>) -> Self {
        Error::Divergence {
            what: what.into(),
            last_good: None,
        }
    }
}
