use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the normalization floor")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("perturbation position {position} out of range for context length {len}")]
    InvalidPosition { position: usize, len: usize },

    #[error("unknown donor category {0}")]
    UnknownDonor(usize),

    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty set: {0}")]
    EmptySet(&'static str),

    #[error("encoder weights differ between models")]
    EncoderMismatch,

    #[error("encoder weights are rank deficient ({rank} < {cols})")]
    RankDeficient { rank: usize, cols: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },

    #[error("label {label} out of range for {num_categories} categories")]
    LabelOutOfRange { label: u32, num_categories: u32 },

    #[error("unknown encoder kind tag {0}")]
    UnknownEncoderKind(u8),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch { expected, actual }
    }
}
