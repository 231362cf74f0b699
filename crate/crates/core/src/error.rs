use thiserror::Error;

use crate::ids::WorkerId;

/// Errors raised by the engine, the simulator and the harness.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid segmentation scheme: {0}")]
    InvalidScheme(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite parameter value at index {0}")]
    NonFinite(usize),

    #[error("missing segment {0}")]
    MissingSegment(usize),

    #[error("duplicate segment {0}")]
    DuplicateSegment(usize),

    #[error("segment {segment} has length {actual}, scheme expects {expected}")]
    SegmentLength {
        segment: usize,
        expected: usize,
        actual: usize,
    },

    #[error("empty provider list")]
    EmptyProviders,

    #[error("non-positive aggregation weight for worker {0}")]
    NonPositiveWeight(WorkerId),

    #[error("worker {worker} supplies segment {segment} more than once")]
    DuplicateProvider { segment: usize, worker: WorkerId },

    #[error("insufficient peers: need {needed}, have {available}")]
    InsufficientPeers { needed: usize, available: usize },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid bound parameters: {0}")]
    InvalidBound(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
