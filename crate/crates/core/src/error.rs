use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its domain invariant.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// The scenario file could not be parsed or failed validation.
    #[error("scenario config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numeric divergence at t = {t:.4} s: {what}")]
    Divergence { t: f64, what: String },

    /// The max-dwell-time bound is undefined because the lower rate bound is not positive.
    #[error("dwell-time bound undefined: lower rate bound on component {component} is {value}")]
    DwellUndefined { component: usize, value: f64 },

    #[error("insufficient transmission history")]
    InsufficientHistory,

    #[error("no switch events in the communication window")]
    EmptyWindow,
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
