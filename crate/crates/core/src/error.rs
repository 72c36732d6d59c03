use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown instance id {0}")]
    UnknownInstance(usize),
    #[error("instance {0} has no ground-truth label")]
    MissingLabel(usize),
    #[error("non-finite feature value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("score vector has zero norm")]
    ZeroVector,
    #[error("set cover is infeasible: instance {instance} is not covered by any candidate")]
    Infeasible { instance: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("label for instance {id} rejected: {reason}")]
    LabelRejected { id: usize, reason: &'static str },
    #[error("cannot parse rule text: {0}")]
    RuleParse(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
