//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor shape is invalid or incompatible with an operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A numeric argument lies outside its valid range.
    #[error("range error: {0}")]
    Range(String),

    /// An argument is invalid for reasons other than shape or range.
    #[error("argument error: {0}")]
    Argument(String),

    /// A binary payload is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A text input could not be parsed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A cross-reference inside an input is broken.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// More items were requested than are available.
    #[error("capacity error: requested {requested}, available {available}")]
    Capacity { requested: usize, available: usize },

    /// A referenced key does not exist.
    #[error("lookup error: missing key {0}")]
    MissingKey(String),

    /// A collection has the wrong number of elements.
    #[error("cardinality error: {0}")]
    Cardinality(String),

    /// Training produced a non-finite value.
    #[error("divergence at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
