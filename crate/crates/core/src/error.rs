use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("row {row}: {detail}")]
    Alignment { row: usize, detail: String },

    #[error("empty alignment")]
    EmptyAlignment,

    #[error("unknown phoneme label {0:?}")]
    UnknownPhoneme(String),

    #[error("phoneme id {id} outside inventory of {inventory}")]
    PhonemeOutOfRange { id: usize, inventory: usize },

    #[error("no voiced frames")]
    NoVoicedFrames,

    #[error("length mismatch in {stream}: expected {expected}, got {actual}")]
    LengthMismatch {
        stream: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no external embedding for utterance {0:?}")]
    MissingEmbedding(String),

    #[error("non-finite loss at step {step}; batch: {batch_ids:?}")]
    NonFiniteLoss { step: u64, batch_ids: Vec<String> },

    #[error("utterance {id} has {frames} frames, exceeding the batch budget of {budget}")]
    OverBudget {
        id: String,
        frames: usize,
        budget: usize,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
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

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }
}
