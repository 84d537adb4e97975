//! Library-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by any module in this crate.
#[derive(Debug, Error)]
pub enum KdError {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// Input data, configuration, or file content violates a contract.
    #[error("validation: {0}")]
    Validation(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// File could not be read or written.
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File content could not be parsed.
    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

impl KdError {
    pub fn validation(msg: impl Into<String>) -> Self {
        KdError::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KdError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        KdError::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code the CLI maps this error to:
    /// 1 for validation-class errors, 2 for runtime/numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            KdError::ShapeMismatch { .. } | KdError::Validation(_) | KdError::Parse { .. } => 1,
            KdError::NonFinite(_) | KdError::Io { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, KdError>;
