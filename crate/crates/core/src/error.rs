use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("invalid sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("non-finite value in vector for sample {id}")]
    NonFiniteValue { id: String },

    #[error("too few samples: need at least {needed} distinct points, have {available}")]
    TooFewSamples { needed: usize, available: usize },

    #[error("invalid range: {0}")]
    Range(String),

    #[error("cluster model version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u64, found: u64 },

    #[error("cluster count mismatch: {left} vs {right}")]
    KMismatch { left: usize, right: usize },

    #[error("insufficient data: requested {requested}, store holds {available}")]
    InsufficientData { requested: usize, available: usize },

    #[error("store is empty")]
    EmptyStore,

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("content hash mismatch for {id}: declared {declared}, computed {computed}")]
    HashMismatch {
        id: String,
        declared: String,
        computed: String,
    },

    #[error("a system update is already in progress")]
    UpdateInProgress,

    #[error("service not initialized: {0}")]
    NotInitialized(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),

    #[error("update stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Short machine-readable tag, used in API error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput => "empty_input",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidSample { .. } => "invalid_sample",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::Format { .. } => "format_error",
            Error::NonFiniteValue { .. } => "non_finite_value",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::Range(_) => "range_error",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::KMismatch { .. } => "k_mismatch",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::EmptyStore => "empty_store",
            Error::DuplicateId(_) => "duplicate_id",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::UpdateInProgress => "update_in_progress",
            Error::NotInitialized(_) => "not_initialized",
            Error::NotFound(_) => "not_found",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::StorageFailure(_) => "storage_failure",
            Error::Stage { source, .. } => source.kind(),
        }
    }
}
