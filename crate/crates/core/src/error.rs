use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("out-of-range label {label} at pixel {pixel} (taxonomy has {classes} classes)")]
    OutOfRangeLabel {
        label: u32,
        pixel: usize,
        classes: usize,
    },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("taxonomy mismatch: expected `{expected}`, found `{found}`")]
    TaxonomyMismatch { expected: String, found: String },

    #[error("class index {index} out of range for `{dataset}` ({classes} classes)")]
    ClassOutOfRange {
        dataset: String,
        index: usize,
        classes: usize,
    },

    #[error("unknown class reference {dataset}:{class}")]
    UnknownClass { dataset: String, class: u32 },

    #[error("unresolved conflicts: {0}")]
    UnresolvedConflicts(usize),

    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("invalid universal taxonomy: {0}")]
    InvalidUniversal(String),

    #[error("invalid posterior dump: {0}")]
    InvalidPosterior(String),

    #[error("empty evaluation set for `{0}`")]
    EmptyRecords(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("broken mapping chain: {0}")]
    BrokenChain(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}
