//! Crate-wide error type.

use thiserror::Error;

/// All failure modes of the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid input shape {shape:?}: {reason}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("sign is forward-only: its gradient path is undefined")]
    SignNotDifferentiable,

    #[error("backward already ran on this single-use graph")]
    GraphConsumed,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("no positive pairs: every anchor's positive set is empty")]
    NoPositivePairs,

    #[error("label out of range: {label} >= class count {classes}")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty mask: the target-region attack needs at least one mask pixel")]
    EmptyMask,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported file version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },

    #[error("truncated file while reading {0}")]
    Truncated(String),

    #[error("record count {count} overflows the file payload")]
    CountOverflow { count: u64 },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the index of the sample that produced it.
    pub fn at_sample(self, index: usize) -> Error {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    /// True when the failure stems from user-supplied input (bad files,
    /// out-of-range arguments) rather than an internal invariant.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::InvalidArg(_)
            | Error::LabelOutOfRange { .. }
            | Error::BadMagic { .. }
            | Error::BadVersion { .. }
            | Error::Truncated(_)
            | Error::CountOverflow { .. }
            | Error::EmptyMask
            | Error::Io(_) => true,
            Error::Sample { source, .. } => source.is_user_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
