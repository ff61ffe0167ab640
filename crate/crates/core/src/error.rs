use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DmpsError>;

#[derive(Debug, Error)]
pub enum DmpsError {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dimension too large: {0}")]
    DimensionTooLarge(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate or unsorted index {0}")]
    DuplicateIndex(usize),

    #[error("divisibility: {0}")]
    Divisibility(String),

    #[error("expected {expected} channels, got {got}")]
    ChannelCount { expected: usize, got: usize },

    #[error("kernel: {0}")]
    Kernel(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("covariance is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("operator rows are not orthogonal (off-diagonal mass {0:e})")]
    NotRowOrthogonal(f64),

    #[error("chain {chain} produced a non-finite state at step t={t}")]
    NonFiniteState { chain: usize, t: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("not enough samples: need {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("size mismatch in {path}: {reason}")]
    SizeMismatch { path: PathBuf, reason: String },

    #[error("row {row} has {got} fields, header has {expected}")]
    CsvWidth {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl DmpsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DmpsError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem or by malformed files.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            DmpsError::Io { .. }
                | DmpsError::MalformedHeader { .. }
                | DmpsError::TruncatedPayload { .. }
                | DmpsError::UnsupportedMaxval(_)
                | DmpsError::BadMagic(_)
                | DmpsError::SizeMismatch { .. }
                | DmpsError::Csv(_)
        )
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DmpsError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
