//! Text generation and fine-tuning providers.
//!
//! [`Backend`] is the single seam between the pipeline and whatever actually
//! runs the models. Two implementations ship here:
//!
//! * [`MockBackend`]: deterministic and in-memory. Training memorizes
//!   prompt/completion bindings (SFT binds every record, DPO binds prompt to
//!   chosen, KTO binds desirable records only) and generation returns the bound
//!   completion or a templated fallback naming the first label defined in the
//!   prompt.
//! * [`ExternalBackend`]: hands jobs to an out-of-process trainer through a
//!   directory (`jobs/<id>/spec.json`, `data.jsonl`, `result.json`).
//!
//! The encoder-style text classifier used for style attribution and the
//! full-data baseline lives in [`classifier`].

pub mod classifier;
mod external;
mod mock;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use classifier::{train_style_classifier, train_text_classifier, ClassifierError, ClassifierSpec, LabelDistribution, TextClassifier};
pub use external::{ExternalBackend, JobKind, JobResult, JobSpec, JobStatus, ADAPTER_ROOT_ENV};
pub use mock::{MockBackend, FALLBACK_EXPLANATION};

use crate::digest::json_digest;
use crate::prefdata::TrainingFile;
use crate::prompting::RenderedPrompt;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("generation failed for prompt {index}: {message}")]
    GenerationFailed { index: usize, message: String },
    #[error("training data does not match method {expected}: {reason}")]
    FormatMismatch { expected: Method, reason: String },
    #[error("invalid training spec: {0}")]
    InvalidSpec(String),
    #[error("model {0} is not known to this backend")]
    UnknownModel(String),
    #[error("training failed: {0}")]
    TrainingFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Unavailable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    External,
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Sft,
    Dpo,
    Kto,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sft => "SFT",
            Method::Dpo => "DPO",
            Method::Kto => "KTO",
        })
    }
}

/// Which step of the recipe produced a lineage entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageTag {
    /// Optional auxiliary pre-training on an external explained corpus.
    #[serde(rename = "AUX")]
    Aux,
    #[serde(rename = "SFT")]
    Sft,
    #[serde(rename = "DPO")]
    Dpo,
    #[serde(rename = "KTO")]
    Kto,
    /// SFT on a counterpart model's explanations.
    #[serde(rename = "XSFT")]
    CrossSft,
    /// DPO self-augmentation after cross-model SFT.
    #[serde(rename = "XDPO")]
    CrossDpo,
}

impl StageTag {
    pub fn method(self) -> Method {
        match self {
            StageTag::Aux | StageTag::Sft | StageTag::CrossSft => Method::Sft,
            StageTag::Dpo | StageTag::CrossDpo => Method::Dpo,
            StageTag::Kto => Method::Kto,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::Aux => "AUX",
            StageTag::Sft => "SFT",
            StageTag::Dpo => "DPO",
            StageTag::Kto => "KTO",
            StageTag::CrossSft => "XSFT",
            StageTag::CrossDpo => "XDPO",
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LineageEntry {
    pub stage: StageTag,
    pub spec_digest: String,
    pub data_digest: String,
}

/// Handle to a model and the training applied to it so far.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelRef {
    pub name: String,
    #[serde(default)]
    pub lineage: Vec<LineageEntry>,
    pub backend_kind: BackendKind,
    /// Checkpoint id reported by an external trainer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl ModelRef {
    pub fn base(name: impl Into<String>, backend_kind: BackendKind) -> Self {
        Self {
            name: name.into(),
            lineage: Vec::new(),
            backend_kind,
            checkpoint: None,
        }
    }

    pub fn stages(&self) -> Vec<StageTag> {
        self.lineage.iter().map(|e| e.stage).collect()
    }

    /// Identity of (name, lineage); independent of the checkpoint id.
    pub fn lineage_key(&self) -> String {
        if self.lineage.is_empty() {
            return format!("base:{}", self.name);
        }
        json_digest(&(&self.name, &self.lineage))
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    /// A new ref one training step further along. `self` is left untouched.
    pub fn extended(&self, entry: LineageEntry, checkpoint: Option<String>) -> ModelRef {
        let mut lineage = self.lineage.clone();
        lineage.push(entry);
        ModelRef {
            name: self.name.clone(),
            lineage,
            backend_kind: self.backend_kind,
            checkpoint,
        }
    }
}

/// LoRA adapter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub rank: u32,
    pub alpha: u32,
    pub dropout: f64,
    pub target_modules: Vec<String>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 64,
            alpha: 128,
            dropout: 0.05,
            target_modules: vec!["q_proj".into(), "v_proj".into()],
        }
    }
}

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub method: Method,
    pub epochs: u32,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub adapter: AdapterConfig,
    pub loss_variant: String,
}

impl TrainingSpec {
    pub fn sft(epochs: u32, learning_rate: f64) -> Self {
        Self {
            method: Method::Sft,
            epochs,
            learning_rate,
            beta: None,
            adapter: AdapterConfig::default(),
            loss_variant: "causal_lm".into(),
        }
    }

    pub fn dpo(epochs: u32, learning_rate: f64) -> Self {
        Self {
            method: Method::Dpo,
            epochs,
            learning_rate,
            beta: Some(DEFAULT_BETA),
            adapter: AdapterConfig::default(),
            loss_variant: "sigmoid".into(),
        }
    }

    pub fn kto(epochs: u32, learning_rate: f64) -> Self {
        Self {
            method: Method::Kto,
            epochs,
            learning_rate,
            beta: Some(DEFAULT_BETA),
            adapter: AdapterConfig::default(),
            loss_variant: "kto".into(),
        }
    }

    pub fn for_method(method: Method, epochs: u32, learning_rate: f64) -> Self {
        match method {
            Method::Sft => Self::sft(epochs, learning_rate),
            Method::Dpo => Self::dpo(epochs, learning_rate),
            Method::Kto => Self::kto(epochs, learning_rate),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.epochs < 1 {
            return Err(BackendError::InvalidSpec("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(BackendError::InvalidSpec("learning rate must be positive".into()));
        }
        let alignment = matches!(self.method, Method::Dpo | Method::Kto);
        match self.beta {
            Some(b) if !alignment => Err(BackendError::InvalidSpec(format!("beta {b} given for {}", self.method))),
            None if alignment => Err(BackendError::InvalidSpec(format!("{} requires beta", self.method))),
            Some(b) if !(b.is_finite() && b > 0.0) => Err(BackendError::InvalidSpec("beta must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompts: Vec<RenderedPrompt>,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub seed: u64,
}

/// Decode settings shared by every request a caller issues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub seed: u64,
    /// Prompts per backend call.
    pub batch_size: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            max_new_tokens: 512,
            temperature: 0.0,
            seed: 0,
            batch_size: 64,
        }
    }
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Concurrent `generate` calls the backend accepts.
    fn max_in_flight(&self) -> usize {
        1
    }

    /// One completion per prompt, in request order.
    fn generate(&self, model: &ModelRef, request: &GenerationRequest) -> Result<Vec<String>, BackendError>;

    /// Train `model` on `dataset`, returning a ref with the lineage extended.
    fn train(&self, model: &ModelRef, dataset: &TrainingFile, spec: &TrainingSpec, stage: StageTag) -> Result<ModelRef, BackendError>;
}

/// Generate completions for any number of prompts in `batch_size` chunks,
/// keeping up to `backend.max_in_flight()` chunks in flight. Output order
/// matches `prompts`; failure indices refer to positions in `prompts`.
pub fn generate_all(
    backend: &dyn Backend,
    model: &ModelRef,
    prompts: Vec<RenderedPrompt>,
    settings: &GenerationSettings,
) -> Result<Vec<String>, BackendError> {
    let batch = settings.batch_size.max(1);
    let requests: Vec<(usize, GenerationRequest)> = prompts
        .chunks(batch)
        .enumerate()
        .map(|(i, chunk)| {
            (
                i * batch,
                GenerationRequest {
                    prompts: chunk.to_vec(),
                    max_new_tokens: settings.max_new_tokens,
                    temperature: settings.temperature,
                    seed: settings.seed,
                },
            )
        })
        .collect();
    let run = |(offset, request): &(usize, GenerationRequest)| -> Result<Vec<String>, BackendError> {
        let completions = backend.generate(model, request).map_err(|e| match e {
            BackendError::GenerationFailed { index, message } => BackendError::GenerationFailed {
                index: index + offset,
                message,
            },
            other => other,
        })?;
        if completions.len() != request.prompts.len() {
            return Err(BackendError::GenerationFailed {
                index: offset + completions.len().min(request.prompts.len()),
                message: format!("backend returned {} completions for {} prompts", completions.len(), request.prompts.len()),
            });
        }
        Ok(completions)
    };

    let lanes = backend.max_in_flight().max(1).min(requests.len().max(1));
    let results: Vec<Result<Vec<String>, BackendError>> = if lanes <= 1 {
        requests.iter().map(run).collect()
    } else {
        let mut slots: Vec<Option<Result<Vec<String>, BackendError>>> = (0..requests.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..lanes)
                .map(|lane| {
                    let requests = &requests;
                    let run = &run;
                    scope.spawn(move || {
                        requests
                            .iter()
                            .enumerate()
                            .skip(lane)
                            .step_by(lanes)
                            .map(|(i, r)| (i, run(r)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("generation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk is assigned a lane")).collect()
    };

    let mut out = Vec::with_capacity(prompts.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub(crate) fn check_training_input(dataset: &TrainingFile, spec: &TrainingSpec, stage: StageTag) -> Result<(), BackendError> {
    spec.validate()?;
    if stage.method() != spec.method {
        return Err(BackendError::InvalidSpec(format!("stage {stage} cannot run method {}", spec.method)));
    }
    if dataset.method != spec.method {
        return Err(BackendError::FormatMismatch {
            expected: spec.method,
            reason: format!("file holds {} records", dataset.method),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(TrainingSpec::dpo(3, 5e-5).validate().is_ok());
        assert!(TrainingSpec::sft(3, 3e-4).validate().is_ok());
        let mut s = TrainingSpec::dpo(0, 5e-5);
        assert!(s.validate().is_err());
        s.epochs = 1;
        s.beta = None;
        assert!(s.validate().is_err());
        let mut s = TrainingSpec::sft(1, 1e-4);
        s.beta = Some(0.1);
        assert!(s.validate().is_err());
        assert!(TrainingSpec::kto(1, -1.0).validate().is_err());
    }

    #[test]
    fn adapter_defaults() {
        let a = AdapterConfig::default();
        assert_eq!((a.rank, a.alpha), (64, 128));
        assert_eq!(a.dropout, 0.05);
        let d = TrainingSpec::dpo(3, 1e-5);
        assert_eq!(d.beta, Some(0.1));
        assert_eq!(d.loss_variant, "sigmoid");
    }

    #[test]
    fn spec_digest_is_stable_under_reserialization() {
        let s = TrainingSpec::kto(3, 5e-7);
        let back: TrainingSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back.digest(), s.digest());
    }

    #[test]
    fn extending_leaves_the_parent_alone() {
        let base = ModelRef::base("llama", BackendKind::Mock);
        let entry = LineageEntry {
            stage: StageTag::Sft,
            spec_digest: "s".into(),
            data_digest: "d".into(),
        };
        let child = base.extended(entry, None);
        assert!(base.lineage.is_empty());
        assert_eq!(child.stages(), vec![StageTag::Sft]);
        assert_ne!(child.lineage_key(), base.lineage_key());
    }

    #[test]
    fn stage_tags_serialize_short() {
        assert_eq!(serde_json::to_string(&StageTag::CrossDpo).unwrap(), "\"XDPO\"");
        assert_eq!(StageTag::CrossSft.method(), Method::Sft);
    }
}
