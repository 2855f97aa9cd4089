use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("batch has no items")]
    EmptyBatch,
    #[error("assignments per item must be at least 1")]
    ZeroAssignments,
    #[error("{requested} annotators per item requested, {registered} registered")]
    NotEnoughAnnotators { requested: usize, registered: usize },
    #[error("duplicate sample id {0:?} in batch")]
    DuplicateSample(String),
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("annotator {0:?} already registered")]
    DuplicateAnnotator(String),
    #[error("unknown batch {0:?}")]
    UnknownBatch(String),
    #[error("{annotator_id} already voted on {sample_id}")]
    DuplicateVote { sample_id: String, annotator_id: String },
    #[error("{sample_id} is not assigned to {annotator_id}")]
    NotAssigned { sample_id: String, annotator_id: String },
    #[error("corrupt log line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("invalid setting: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AnnotationError> = std::result::Result<T, E>;
