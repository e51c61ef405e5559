use std::path::PathBuf;

use thiserror::Error;

/// Failures while reading or writing one of the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },
    #[error("unsupported version {found} in {path} (expected {expected})")]
    UnsupportedVersion {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("crc mismatch in {path}: stored {stored:#010x}, computed {computed:#010x}")]
    Crc {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },
    #[error("non-finite value in {path} at element {index}")]
    NonFinite { path: PathBuf, index: usize },
    #[error("dimension mismatch in {path}: expected {expected}, found {found}")]
    DimensionMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("malformed {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("feature map for view {view_id} has no matching camera ({path})")]
    UnmatchedView { path: PathBuf, view_id: u32 },
}

impl FormatError {
    /// Short stable name of the error kind, used in logs and tests.
    pub fn kind(&self) -> &'static str {
        match self {
            FormatError::Io { .. } => "io",
            FormatError::Truncated { .. } => "truncated",
            FormatError::BadMagic { .. } => "magic",
            FormatError::UnsupportedVersion { .. } => "version",
            FormatError::Crc { .. } => "crc",
            FormatError::NonFinite { .. } => "non-finite",
            FormatError::DimensionMismatch { .. } => "dimension",
            FormatError::Malformed { .. } => "malformed",
            FormatError::UnmatchedView { .. } => "unmatched-view",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid granularity {0}, expected 1, 2 or 3")]
    InvalidGranularity(u32),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing feature map for view {view_id} at granularity {granularity}")]
    MissingView { view_id: u32, granularity: u32 },
    #[error("no valid training samples at granularity {0}")]
    NoValidSamples(u32),
    #[error(
        "could not make every Gaussian visible in at least two views after {attempts} attempts \
         ({failing} still failing); try more views"
    )]
    VisibilityUnreachable { attempts: usize, failing: usize },
    #[error("localization query has an empty ground-truth region")]
    EmptyRegion,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
