use std::path::PathBuf;

use thiserror::Error;

use crate::training::EpochReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty sample")]
    EmptySample,

    #[error("empty point set")]
    EmptySet,

    #[error("k = {k} exceeds the {n} available points")]
    KExceedsN { k: usize, n: usize },

    #[error("anchor {anchor} has no positive candidate")]
    NoPositive { anchor: usize },

    #[error("anchor {anchor} has no negative candidate")]
    NoNegative { anchor: usize },

    #[error("empty triplet batch")]
    EmptyBatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("forward cache does not match the current parameters")]
    StaleCache,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("bad magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("sample count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("fraction out of range: {0}")]
    FractionOutOfRange(String),

    #[error("could not place {classes} centers with spacing {spacing} after {attempts} attempts")]
    PackingFailed {
        classes: usize,
        spacing: f64,
        attempts: usize,
    },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged {
        epoch: usize,
        partial: Vec<EpochReport>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::EmptySample => "empty_sample",
            Error::EmptySet => "empty_set",
            Error::KExceedsN { .. } => "k_exceeds_n",
            Error::NoPositive { .. } => "no_positive",
            Error::NoNegative { .. } => "no_negative",
            Error::EmptyBatch => "empty_batch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::StaleCache => "stale_cache",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::FractionOutOfRange(_) => "fraction_out_of_range",
            Error::PackingFailed { .. } => "packing_failed",
            Error::Diverged { .. } => "diverged",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::CountMismatch { .. }
            | Error::Format { .. }
            | Error::LabelOutOfRange { .. }
            | Error::PackingFailed { .. }
            | Error::NoPositive { .. }
            | Error::NoNegative { .. } => 3,
            Error::Diverged { .. } | Error::NonFinite(_) => 4,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
