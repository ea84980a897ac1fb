//! Shared error type for the lab crates.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operator received tensors whose extents cannot be combined.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A NaN or infinity appeared where finite values are required.
    /// `context` names the operator, block, or parameter involved.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A caller violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A CSV cell failed to parse; names the offending row and column.
    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    /// A binary artifact (checkpoint, capture) is malformed or truncated.
    #[error("{path}: {message}")]
    FileFormat { path: String, message: String },

    /// A checkpoint was produced by a model incompatible with the caller's.
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}
