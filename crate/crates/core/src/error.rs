use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("group file has {found} entries but the dataset has {expected} documents")]
    GroupCount { expected: usize, found: usize },

    #[error("group value {value:?} at entry {index} is not 0 or 1")]
    GroupValue { index: usize, value: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("not a permutation of 0..{n}: {order:?}")]
    InvalidPermutation { n: usize, order: Vec<usize> },

    #[error("exact enumeration requested for {n} documents (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("group labels are required but missing")]
    MissingGroups,

    #[error("not enough records: {0}")]
    InsufficientRecords(String),

    #[error("non-finite gradient on query {qid}")]
    NonFinite { qid: String },

    #[error("LP solver: {0}")]
    Solver(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
