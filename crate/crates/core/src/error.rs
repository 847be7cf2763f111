use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("singular matrix: pivot {pivot:e} at column {column}")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("batch of {0} rows is too small to track statistics")]
    DegenerateBatch(usize),
    #[error("backward called on a cache that was already consumed")]
    StaleCache,
    #[error("source running statistics were never populated")]
    UninitializedSource,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {class} out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },
    #[error("memory bank is empty")]
    EmptyBank,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("need at least 2 distributions, got {0}")]
    TooFewDistributions(usize),
    #[error("class {0} has no samples")]
    EmptyClassPool(usize),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("file is empty: {0}")]
    EmptyFile(PathBuf),
    #[error("non-numeric feature at line {line}, column {column}: {value:?}")]
    NonNumericFeature { line: usize, column: usize, value: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint not found: {0}")]
    CheckpointMissing(PathBuf),
    #[error("unknown method: {0}")]
    UnknownMethod(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
