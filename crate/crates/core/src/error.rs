use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad error classes; the CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated {section}: expected {expected} bytes, found {found}")]
    Truncated {
        section: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{extra} unexpected trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("non-finite value at turn {turn}, layer {layer}, dim {dim}")]
    NonFinite { turn: usize, layer: usize, dim: usize },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("duplicate interaction id {0:?}")]
    DuplicateInteraction(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("condition mismatch: {0}")]
    ConditionMismatch(String),
    #[error("insufficient data: {available} rows available, {required} required")]
    InsufficientData { available: usize, required: usize },
    #[error("need at least {required} groups to split, found {found}")]
    TooFewGroups { required: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not positive definite at pivot {pivot}; {hint}")]
    RankDeficient { pivot: usize, hint: &'static str },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("score table error: {0}")]
    ScoreTable(String),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Validation { .. } | Header(_) | Json(_) => ErrorKind::Validation,
            RankDeficient { .. } | Diverged { .. } | UndefinedCorrelation(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
