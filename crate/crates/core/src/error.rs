//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or missing input (exit 2).
    Input,
    /// A training or optimization stage could not proceed (exit 3).
    Training,
    /// An internal invariant was violated (exit 4).
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-norm vector has no direction")]
    ZeroNormVector,
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid probability {0}; expected a value in [0, 1]")]
    InvalidProbability(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: invalid label {value}; expected 0 or 1")]
    InvalidLabel { line: usize, value: String },
    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated file: need {needed} bytes, have {available}")]
    TruncatedFile { needed: usize, available: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("k = {k} exceeds the {rows} available rows")]
    KTooLarge { k: usize, rows: usize },
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("no anchor carries label {0}")]
    MissingAnchorClass(u8),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("split {0:?} is empty")]
    EmptySplit(&'static str),
    #[error("module {0} requires {1}")]
    MissingInput(String, &'static str),

    #[error("logit panel shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weight vector off the simplex: {0}")]
    InvalidWeights(String),
    #[error("no episodes in batch")]
    EmptyBatch,

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Io { .. }
            | Parse { .. }
            | DuplicateId { .. }
            | InvalidLabel { .. }
            | BadMagic { .. }
            | VersionMismatch { .. }
            | TruncatedFile { .. }
            | TrailingBytes(_)
            | InvalidConfig(_)
            | EmptySplit(_)
            | MissingInput(..)
            | InvalidProbability(_) => ErrorKind::Input,
            KTooLarge { .. }
            | EmptyCluster
            | MissingAnchorClass(_)
            | NonPositiveTemperature(_)
            | EmptyBatch
            | NonFinite(_) => ErrorKind::Training,
            DimensionMismatch { .. }
            | ZeroNormVector
            | EmptyInput
            | LengthMismatch { .. }
            | ShapeMismatch(_)
            | InvalidWeights(_)
            | Invariant(_) => ErrorKind::Internal,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
