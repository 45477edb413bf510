use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate embedding: vector has zero or non-finite norm")]
    DegenerateEmbedding,

    #[error("embedding norm {norm} is not 1 within tolerance")]
    NotUnitNorm { norm: f64 },

    #[error("bad magic in {what}: expected {expected:?}, found {found:?}")]
    BadMagic {
        what: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported {what} version {version}")]
    UnsupportedVersion { what: &'static str, version: u32 },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} does not match: {detail}")]
    HeaderMismatch { what: &'static str, detail: String },

    #[error("no inter-class context: support set is empty")]
    EmptySupport,

    #[error("anchor index is empty")]
    EmptyIndex,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("query {index} failed: {source}")]
    Query {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pair row {row}: {side} index {index} out of range (len {len})")]
    PairOutOfRange {
        row: usize,
        side: &'static str,
        index: usize,
        len: usize,
    },

    #[error("score table has no impostor pairs")]
    NoImpostors,

    #[error("score table has no genuine pairs")]
    NoGenuine,

    #[error("cannot build protocol: {0}")]
    Protocol(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by malformed or inconsistent file contents.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::UnsupportedVersion { .. }
                | Error::Truncated { .. }
                | Error::HeaderMismatch { .. }
                | Error::Parse { .. }
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
