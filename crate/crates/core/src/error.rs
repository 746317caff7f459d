use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("audio contains no samples: {0}")]
    EmptyAudio(PathBuf),
    #[error("waveform too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("hierarchical combination needs {expected} tap embeddings, got {got}")]
    MissingTap { expected: usize, got: usize },

    #[error("speaker directory has no audio files: {0}")]
    EmptySpeaker(PathBuf),
    #[error("corpus has no usable speakers under {0}")]
    EmptyCorpus(PathBuf),
    #[error("need at least 2 speakers, found {0}")]
    TooFewSpeakers(usize),
    #[error("converter failed ({status}): {stderr}")]
    ConverterFailed { status: String, stderr: String },
    #[error("converter produced unusable output {path}: {reason}")]
    BadOutput { path: PathBuf, reason: String },
    #[error("split sizes {n_train}+{n_test} do not match {n_records} records")]
    SizeMismatch {
        n_train: usize,
        n_test: usize,
        n_records: usize,
    },

    #[error("series is empty")]
    EmptySeries,
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("checkpoint does not match configuration: {0}")]
    ConfigMismatch(String),
    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn malformed(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            reason: reason.into(),
        }
    }
}
