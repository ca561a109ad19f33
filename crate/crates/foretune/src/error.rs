use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ladder `{name}`: {reason}")]
    InvalidLadder { name: String, reason: String },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("value {value} is not a rung of ladder `{name}`")]
    NotOnLadder { name: String, value: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid searcher knobs: {0}")]
    InvalidKnobs(String),

    #[error("objective must be finite, got {0}")]
    NonFiniteObjective(f64),

    #[error("non-finite loss at batch index {0}")]
    NonFiniteLoss(usize),

    #[error("estimated {needed} bytes exceeds the memory budget of {budget} bytes")]
    MemoryGate { needed: u64, budget: u64 },

    #[error("grid exhausted after {0} suggestions")]
    GridExhausted(u64),

    #[error("search space text is malformed at line {line}: {reason}")]
    SpaceText { line: usize, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("split rejected: {0}")]
    Split(String),

    #[error("model configuration invalid: {0}")]
    Model(String),

    #[error("scheduler consistency fault: {0}")]
    Consistency(String),

    #[error("store error: {0}")]
    Store(String),

    #[error("resume rejected: {0}")]
    Resume(String),

    #[error("analysis input invalid: {0}")]
    Analysis(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
