use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("label `{label}` is not in the vocabulary of task `{task}`")]
    Vocabulary { task: String, label: String },

    #[error("no grouping entry for raw label `{0}`")]
    UnmappedLabel(String),

    #[error("no concept mapping for facet <{0}>")]
    UnmappedFacet(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("class {index} has zero samples, balanced weight is undefined")]
    DegenerateClass { index: usize },

    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("missing upstream artifact: {0}")]
    Dependency(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
