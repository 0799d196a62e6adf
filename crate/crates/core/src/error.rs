use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("zero-norm vector cannot be normalized")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("index {index} out of range for retrieval zone of length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("retrieval zone is not resident; reads must go through fetch_topk")]
    ColdRead,
}

pub type Result<T> = std::result::Result<T, Error>;
