use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("invalid shape spec: {0}")]
    Spec(String),
    #[error("record {id}: {message}")]
    Load { id: String, message: String },
    #[error("dataset validation failed: {0}")]
    Validation(String),
    #[error("empty condition: at least one attribute must be active")]
    EmptyCondition,
    #[error("attribute id {id} outside vocabulary of size {vocab}")]
    Vocabulary { id: usize, vocab: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("objective assembly: {0}")]
    Assembly(String),
    #[error("non-finite loss term `{term}` at iteration {iteration}")]
    NonFinite { term: String, iteration: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint has no `{0}` section")]
    MissingSection(String),
    #[error("checkpoint was written for config {checkpoint}, current config hashes to {current}; refusing to resume")]
    ConfigMismatch { checkpoint: String, current: String },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
