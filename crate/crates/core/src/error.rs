use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shapes, ranges, counts).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced a non-finite value.
    #[error("numeric error at {location}: {message}")]
    Numeric { location: String, message: String },

    /// A statistic is undefined for the given input.
    #[error("undefined result: {0}")]
    Undefined(String),

    /// A file did not match the expected column layout.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell could not be parsed as a number.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Configuration failed validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// A checkpoint failed magic, version, or checksum verification.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver.
    ///
    /// 1 for validation failures, 2 for runtime or numeric failures, 3 for IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Schema(_) | Error::Parse { .. } => 1,
            Error::Numeric { .. } | Error::Undefined(_) | Error::CorruptCheckpoint(_) => 2,
            Error::Io { .. } => 3,
        }
    }
}

/// Shorthand for returning a contract violation when `cond` is false.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
