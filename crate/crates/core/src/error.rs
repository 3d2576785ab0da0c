use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss does not depend on any tensor that requires grad")]
    DetachedGraph,

    #[error("image format error: {0}")]
    Format(String),

    #[error("truncated data: {0}")]
    Truncated(String),

    #[error("bad magic: expected \"JPGN\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("mask generation exhausted {tries} tries without hitting bucket {bucket}")]
    MaskExhausted { bucket: &'static str, tries: usize },

    #[error("mask ratio {0} is outside the evaluation protocol (0, 0.6]")]
    OutOfProtocol(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("network `{0}` must be frozen before fusion training")]
    NotFrozen(&'static str),

    #[error("missing prerequisite checkpoint {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("no samples fell in bucket {0}")]
    EmptyBucket(&'static str),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}
