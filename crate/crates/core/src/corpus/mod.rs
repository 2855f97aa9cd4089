//! Dataset ingestion, anonymization, stratified splitting and K-shot sampling.

mod anonymize;
mod label_space;
mod load;
mod sample;
mod split;
mod synthetic;

pub use anonymize::anonymize;
pub use label_space::{LabelSpace, Task, TaskPreset};
pub use load::{load_dataset, merge_explanations, read_examples, write_examples};
pub use sample::{complementary_pool, sample_eval_subset, sample_k_shot, EvalSubset, SampleMode, ShotPool};
pub use split::{split_dataset, DatasetSplit, SplitRatios, SplitTag};
pub use synthetic::synthetic_examples;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { label: String, line: usize },
    #[error("line {line}: duplicate post id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("split ratios must be non-negative and sum to 1, got {train}:{val}:{test}")]
    BadRatios { train: f64, val: f64, test: f64 },
    #[error("class {label:?} has {available} members, {requested} requested")]
    ClassExhausted { label: String, available: usize, requested: usize },
    #[error("k must be at least 1")]
    ZeroShots,
    #[error("evaluation subsets must come from the validation or test split")]
    TrainSplitForEval,
    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// A post after anonymization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub post: Post,
    pub gold_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_explanation: Option<String>,
}

impl LabeledExample {
    pub fn id(&self) -> &str {
        &self.post.id
    }
}
