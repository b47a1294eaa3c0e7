use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    /// A value is outside its documented domain. `field` names the offending
    /// parameter, using a dotted path for nested configuration.
    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    /// Malformed or truncated binary/text input.
    #[error("format error: {0}")]
    Format(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("timing mismatch: {0}")]
    Timing(String),

    #[error("protocol precondition failed: {0}")]
    Precondition(String),

    #[error("signal saturated: {0}")]
    Saturated(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("manifest mismatch: {0}")]
    Manifest(String),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    ///
    /// 2 covers everything a caller can fix by changing inputs, 3 means the
    /// run completed but the requested metric has no defined value.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MetricUndefined(_) => 3,
            Error::Io { .. } | Error::Stream(_) => 1,
            _ => 2,
        }
    }
}
