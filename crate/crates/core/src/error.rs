//! Error taxonomy shared across the workspace.
//!
//! The CLI maps these onto process exit codes: configuration problems
//! exit 2, data/IO problems exit 3, numeric failures (NaN/Inf) exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or a contract violation caused by caller input.
    #[error("config error: {0}")]
    Config(String),

    /// Shape mismatch in a tensor operation.
    #[error("shape error in `{op}`: lhs {lhs:?} vs rhs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Malformed input data (parse failures carry the byte offset).
    #[error("data error: {0}")]
    Data(String),

    /// I/O failure while reading or writing artifacts.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A non-finite value (NaN or Inf) was produced by an operation.
    #[error("numeric failure: non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::NonFinite { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
