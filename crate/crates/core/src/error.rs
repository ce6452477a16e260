use std::path::PathBuf;

use swtensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported version {version}")]
    Version { path: PathBuf, version: u32 },
    #[error("{path}: size mismatch, expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("format: {0}")]
    Format(String),
    #[error("checkpoint config mismatch on keys: {}", .0.join(", "))]
    ConfigMismatch(Vec<String>),
    #[error("pattern {pattern} is infeasible on a {layout} layout")]
    Infeasible {
        pattern: &'static str,
        layout: &'static str,
    },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Coarse error class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnknownKey(_) | Error::BadValue { .. } | Error::ConfigMismatch(_) => {
                ErrorKind::Usage
            }
            Error::NonFiniteLoss { .. } => ErrorKind::Numeric,
            Error::Tensor(t) if t.is_numeric() => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
