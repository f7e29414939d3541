//! Error type shared by every module of the core crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: grade {grade} outside the 0..=4 range")]
    InvalidGrade { line: usize, grade: i64 },

    #[error("dataset contains no queries")]
    EmptyDataset,

    #[error("interaction log is empty")]
    EmptyLog,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero propensity for clicked document {doc} of query {query}")]
    ZeroPropensity { query: usize, doc: usize },

    #[error("divergence is infinite: document {doc} of query {query} has zero logging exposure")]
    InfiniteDivergence { query: usize, doc: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
