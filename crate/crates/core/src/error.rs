use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("xml parse error at line {line}, column {column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },

    #[error("unknown aspect category `{0}`")]
    UnknownCategory(String),

    #[error("record {index}: missing required key `{key}`")]
    MissingKey { index: usize, key: String },

    #[error("record {index}: unknown sentiment `{value}`")]
    UnknownSentiment { index: usize, value: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("line {line}: {source}")]
    JsonLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot split {0} records: at least 10 are required")]
    TooFewRecords(usize),

    #[error("empty aspect inventory")]
    EmptyInventory,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("right-mode query needs at least one aspect")]
    EmptyRightAspects,

    #[error("segment a needs {needed} tokens but only {budget} fit within max_length")]
    SegmentTooLong { needed: usize, budget: usize },

    #[error("token id {id} out of vocabulary range {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("inventory mismatch: model expects {expected:?}, got {actual:?}")]
    InventoryMismatch {
        expected: Vec<String>,
        actual: Vec<String>,
    },

    #[error("records missing labels: {0:?}")]
    MissingLabels(Vec<String>),

    #[error("non-finite loss at epoch {epoch}, step {step} (batch {batch_ids:?})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch_ids: Vec<String>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("unsupported backbone `{0}`")]
    UnsupportedBackbone(String),

    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
