//! Stage orchestration.
//!
//! Stage 1 sweeps the K schedule: for every (K, model) the model is
//! fine-tuned on K explained shots per class, asked to justify every label
//! for those shots, and aligned on the resulting preference data. Stage 2
//! takes each model's Stage 1 checkpoint at `k_check` and refines it on its
//! counterpart's explanations over the next `k_check` shots per class.
//! Every step is recorded in an append-only [`RunRecord`].

mod config;
mod hyper;
mod record;
mod runner;
mod select;

pub use config::{EvalConfig, Metric, ModelSpec, RunConfig, Seeds, SubsamplingConfig};
pub use hyper::{family_key, lookup_hyperparameters, HyperparameterRegistry, Hyperparameters, Technique, DEFAULT_DPO, DEFAULT_KTO, DEFAULT_SFT};
pub use record::{CellRecord, CellStatus, RunLog, RunRecord, RunStage, StepKind, StepRecord};
pub use runner::{collect_label_consistent, ConsistentSample, LabelConsistentSet, Pipeline};
pub use select::select_best;

use crate::backend::{BackendError, ClassifierError};
use crate::corpus::CorpusError;
use crate::evalkit::EvalError;
use crate::prefdata::PrefDataError;
use crate::prompting::PromptError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("no successful Stage 1 checkpoint for model {model} at K={k}")]
    MissingCheckpoint { model: String, k: usize },
    #[error("no successful cell to select from")]
    NoSuccessfulCell,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    PrefData(#[from] PrefDataError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
