use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("JPEG quality {0} outside 1..=100")]
    InvalidQuality(u32),

    #[error("zero output dimension ({width}x{height})")]
    ZeroDimension { width: u32, height: u32 },

    #[error("crop box does not intersect the image")]
    EmptyIntersection,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training set contains a single class")]
    DegenerateLabels,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("score set needs at least one bona fide and one attack record")]
    SingleClass,

    #[error("score set has no bona fide records")]
    NoBonafide,

    #[error("score sets cover different samples: {0}")]
    IdMismatch(String),

    #[error("sample {0} has conflicting labels across score sets")]
    LabelConflict(String),

    #[error("invalid score {score} for sample {id}")]
    InvalidScore { id: String, score: f64 },

    #[error("duplicate sample id {0}")]
    DuplicateId(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate path {path}")]
    DuplicatePath { line: usize, path: String },

    #[error("line {line}: unknown label {label:?} (expected bonafide or attack)")]
    UnknownLabel { line: usize, label: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_sample(self, id: &str) -> Self {
        Error::Sample {
            id: id.to_owned(),
            source: Box::new(self),
        }
    }

    /// True for failures caused by the inputs rather than by this crate.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Internal(_) => false,
            Error::Sample { source, .. } => source.is_data_error(),
            _ => true,
        }
    }
}
