use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: {detail}")]
    Shape { axis: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model spec: {0}")]
    ModelSpec(String),

    #[error("cannot classify parameter `{name}`: {reason}")]
    Classify { name: String, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite loss at iteration {iteration} (epoch {epoch})")]
    NonFiniteLoss { iteration: u64, epoch: u64 },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{what} at byte offset {offset}: {msg}")]
    Format {
        what: &'static str,
        offset: u64,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(axis: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
