use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic 0x{found:08x} at offset 0 (expected 0x{expected:08x})")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated at offset {offset}: need {needed} bytes, {available} available")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{path}: item count {found} at offset 4 does not match {expected} in the paired file")]
    CountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: label {label} at offset {offset} is not a digit")]
    BadLabel { path: PathBuf, offset: usize, label: u8 },

    #[error("{path}: unsupported format version {version}")]
    BadVersion { path: PathBuf, version: u8 },

    #[error("non-finite value at ({row}, {col}) cannot be written")]
    NonFinite { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown class index {class} (dataset has {num_classes} classes)")]
    UnknownClass { class: usize, num_classes: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {what} in layer {layer}")]
    Numeric { layer: String, what: &'static str },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("missing context for {method}: {what}")]
    MissingContext { method: &'static str, what: &'static str },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unlabeled pool exhausted")]
    PoolExhausted,

    #[error("train label {0} was already revealed")]
    AlreadyRevealed(usize),

    #[error("pass accounting mismatch: {0}")]
    Accounting(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
