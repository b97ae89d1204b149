use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line count mismatch: source has {source_lines} lines, target has {target_lines}")]
    LineCountMismatch { source_lines: usize, target_lines: usize },

    #[error("corpus {0} has no usable sentence pairs")]
    EmptyCorpus(String),

    #[error("unknown language code `{0}`")]
    UnknownLanguage(String),

    #[error("invalid language pair: {0}")]
    InvalidPair(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("vocabulary size {requested} is below the minimum feasible size {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },

    #[error("token id {id} is out of range for a vocabulary of {size}")]
    InvalidTokenId { id: u32, size: usize },

    #[error("example {index} needs {tokens} tokens, exceeding the batch budget of {budget}")]
    ExampleTooLong { index: usize, tokens: usize, budget: usize },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("source sequence does not begin with a language tag")]
    MissingTag,

    #[error("non-finite loss at step {step} (batch fingerprint {fingerprint:016x})")]
    NonFiniteLoss { step: usize, fingerprint: u64 },

    #[error("no checkpoints to select from")]
    NoCheckpoints,

    #[error("pair {0} has direct training data and is not zero-shot")]
    NotZeroShot(String),

    #[error("missing score for pair {0}")]
    MissingPair(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
