use std::io;

use thiserror::Error;

/// Errors raised by parsing, model I/O and the solvers.
#[derive(Debug, Error)]
pub enum FmError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Well-formed tokens that violate the matrix structure (unsorted or
    /// duplicate indices, column count overflow).
    #[error("line {line}: {msg}")]
    Structure { line: usize, msg: String },

    /// Non-finite numeric value.
    #[error("line {line}: {msg}")]
    Range { line: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{0}")]
    Divergence(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, FmError>;
