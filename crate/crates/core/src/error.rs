use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the stage that raises them so callers (the CLI in
/// particular) can map them onto exit codes with [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    // tensor engine
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: invalid attribute ({detail})")]
    InvalidAttr { op: &'static str, detail: String },
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward root is detached from the graph (no gradient path)")]
    DetachedRoot,
    #[error("{op}: zero-norm row {row} in input {input}")]
    ZeroNorm { op: &'static str, input: usize, row: usize },

    // record ingestion
    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("{context}: dimension mismatch: {detail}")]
    DimensionMismatch { context: String, detail: String },
    #[error("{context}: non-finite sample at lead {lead}, index {index}")]
    NanContent { context: String, lead: usize, index: usize },
    #[error("invalid lead layout: {0}")]
    LeadOrder(String),
    #[error("invalid class mix: {0}")]
    InvalidClassMix(String),
    #[error("sampling rate {fs} Hz too low for a {cutoff} Hz low-pass")]
    FsTooLow { fs: f64, cutoff: f64 },
    #[error("invalid target sampling rate {0}")]
    InvalidTargetFs(f64),
    #[error("record {record_id} too short: {detail}")]
    TooShort { record_id: String, detail: String },
    #[error("signal length {len} not divisible by patch length {patch_len}")]
    Divisibility { len: usize, patch_len: usize },
    #[error("manifest invalid: {0}")]
    Manifest(String),

    // masking / model
    #[error("parameter out of range: {0}")]
    ParamRange(String),
    #[error("encoder needs at least one visible patch")]
    EmptyVisibleSet,
    #[error("mask plan does not match token sequence: {0}")]
    PlanMismatch(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint parameter {name}: expected shape {expected:?}, found {found:?}")]
    CheckpointShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    // objectives / training
    #[error("reconstruction loss needs at least one masked patch")]
    EmptyMask,
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::ParamRange(_) | Error::InvalidClassMix(_) | Error::InvalidTargetFs(_) => {
                ErrorCategory::Usage
            }
            Error::NonFiniteGradient(_)
            | Error::NonFiniteLoss { .. }
            | Error::ZeroNorm { .. }
            | Error::NonScalarRoot(_)
            | Error::DetachedRoot => ErrorCategory::Numeric,
            _ => ErrorCategory::Data,
        }
    }
}
