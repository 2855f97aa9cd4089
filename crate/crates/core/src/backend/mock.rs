use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{check_training_input, Backend, BackendError, BackendKind, GenerationRequest, LineageEntry, ModelRef, StageTag, TrainingSpec};
use crate::prefdata::{deserialize, TrainingFile, TrainingRecord};
use crate::prompting::{first_defined_label, format_completion};

pub const FALLBACK_EXPLANATION: &str = "fallback.";

type Bindings = BTreeMap<String, String>;

#[derive(Debug, Default)]
struct Faults {
    unavailable: bool,
    generation: HashSet<String>,
    training: HashSet<(String, StageTag)>,
}

/// Deterministic in-memory backend.
///
/// Every model is a table of prompt -> completion bindings keyed by its
/// lineage. Unbound prompts get
/// `EXPLANATION: fallback.\nLABEL: <first label in the definitions block>`.
#[derive(Debug)]
pub struct MockBackend {
    models: RwLock<HashMap<String, Arc<Bindings>>>,
    faults: Mutex<Faults>,
    max_in_flight: usize,
}

#[derive(Serialize, Deserialize)]
struct MockState {
    models: BTreeMap<String, Bindings>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    fail_generation: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    fail_training: Vec<(String, StageTag)>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self {
            models: RwLock::new(HashMap::new()),
            faults: Mutex::new(Faults::default()),
            max_in_flight: 8,
        }
    }

    pub fn model(&self, name: &str) -> ModelRef {
        ModelRef::base(name, BackendKind::Mock)
    }

    /// Pre-load bindings for a model, e.g. to script a base model's behaviour.
    pub fn bind<I, P, C>(&self, model: &ModelRef, pairs: I)
    where
        I: IntoIterator<Item = (P, C)>,
        P: Into<String>,
        C: Into<String>,
    {
        let key = model.lineage_key();
        let mut models = self.models.write().expect("mock state poisoned");
        let mut table = models.get(&key).map(|b| (**b).clone()).unwrap_or_default();
        for (p, c) in pairs {
            table.insert(p.into(), c.into());
        }
        models.insert(key, Arc::new(table));
    }

    pub fn fallback_completion(prompt: &str) -> String {
        format_completion(FALLBACK_EXPLANATION, first_defined_label(prompt).unwrap_or("unknown"))
    }

    /// Make every call fail with [`BackendError::Unavailable`].
    pub fn set_unavailable(&self, unavailable: bool) {
        self.faults.lock().expect("mock state poisoned").unavailable = unavailable;
    }

    /// Make generation fail for every model with this name.
    pub fn fail_generation_for(&self, model_name: &str) {
        self.faults.lock().expect("mock state poisoned").generation.insert(model_name.to_string());
    }

    /// Make training at `stage` fail for every model with this name.
    pub fn fail_training_for(&self, model_name: &str, stage: StageTag) {
        self.faults
            .lock()
            .expect("mock state poisoned")
            .training
            .insert((model_name.to_string(), stage));
    }

    /// Persist bindings and injected faults (not the unavailable switch).
    pub fn save_state(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let models = self.models.read().expect("mock state poisoned");
        let faults = self.faults.lock().expect("mock state poisoned");
        let mut fail_generation: Vec<String> = faults.generation.iter().cloned().collect();
        fail_generation.sort();
        let mut fail_training: Vec<(String, StageTag)> = faults.training.iter().cloned().collect();
        fail_training.sort_by(|a, b| (&a.0, a.1.as_str()).cmp(&(&b.0, b.1.as_str())));
        let state = MockState {
            models: models.iter().map(|(k, v)| (k.clone(), (**v).clone())).collect(),
            fail_generation,
            fail_training,
        };
        std::fs::write(path, serde_json::to_vec(&state).map_err(std::io::Error::other)?)
    }

    pub fn load_state(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let state: MockState = serde_json::from_slice(&std::fs::read(path)?).map_err(std::io::Error::other)?;
        let backend = Self::new();
        *backend.models.write().expect("mock state poisoned") = state.models.into_iter().map(|(k, v)| (k, Arc::new(v))).collect();
        {
            let mut faults = backend.faults.lock().expect("mock state poisoned");
            faults.generation.extend(state.fail_generation);
            faults.training.extend(state.fail_training);
        }
        Ok(backend)
    }

    fn bindings_for(&self, model: &ModelRef) -> Result<Arc<Bindings>, BackendError> {
        let models = self.models.read().expect("mock state poisoned");
        match models.get(&model.lineage_key()) {
            Some(b) => Ok(Arc::clone(b)),
            None if model.lineage.is_empty() => Ok(Arc::new(Bindings::new())),
            None => Err(BackendError::UnknownModel(format!("{} ({} training steps)", model.name, model.lineage.len()))),
        }
    }

    fn check_available(&self) -> Result<(), BackendError> {
        if self.faults.lock().expect("mock state poisoned").unavailable {
            Err(BackendError::Unavailable("mock backend switched off".into()))
        } else {
            Ok(())
        }
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn generate(&self, model: &ModelRef, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        self.check_available()?;
        if self.faults.lock().expect("mock state poisoned").generation.contains(&model.name) {
            return Err(BackendError::GenerationFailed {
                index: 0,
                message: format!("injected failure for {}", model.name),
            });
        }
        let bindings = self.bindings_for(model)?;
        Ok(request
            .prompts
            .iter()
            .map(|p| bindings.get(&p.text).cloned().unwrap_or_else(|| Self::fallback_completion(&p.text)))
            .collect())
    }

    fn train(&self, model: &ModelRef, dataset: &TrainingFile, spec: &TrainingSpec, stage: StageTag) -> Result<ModelRef, BackendError> {
        self.check_available()?;
        check_training_input(dataset, spec, stage)?;
        if self
            .faults
            .lock()
            .expect("mock state poisoned")
            .training
            .contains(&(model.name.clone(), stage))
        {
            return Err(BackendError::TrainingFailed(format!("injected failure for {} at {stage}", model.name)));
        }
        let records = deserialize(dataset).map_err(|e| BackendError::FormatMismatch {
            expected: spec.method,
            reason: e.to_string(),
        })?;
        let mut table = (*self.bindings_for(model)?).clone();
        for record in records {
            match record {
                TrainingRecord::Sft(r) => {
                    table.insert(r.prompt, r.completion);
                }
                TrainingRecord::Dpo(r) => {
                    table.insert(r.prompt, r.chosen);
                }
                TrainingRecord::Kto(r) => {
                    if r.label {
                        table.insert(r.prompt, r.completion);
                    }
                }
            }
        }
        let child = model.extended(
            LineageEntry {
                stage,
                spec_digest: spec.digest(),
                data_digest: dataset.digest(),
            },
            None,
        );
        self.models
            .write()
            .expect("mock state poisoned")
            .insert(child.lineage_key(), Arc::new(table));
        Ok(child)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Method, TrainingSpec};
    use crate::corpus::{Post, Task};
    use crate::prefdata::{serialize, DpoLine, KtoLine, SftLine};
    use crate::prompting::{render_classification_prompt, render_conditional_prompt, PromptKind, RenderedPrompt};

    fn prompt(text: &str) -> RenderedPrompt {
        RenderedPrompt {
            text: text.into(),
            kind: PromptKind::Classification,
            post_id: "x".into(),
            conditioned_label: None,
        }
    }

    fn request(texts: &[&str]) -> GenerationRequest {
        GenerationRequest {
            prompts: texts.iter().map(|t| prompt(t)).collect(),
            max_new_tokens: 64,
            temperature: 0.0,
            seed: 0,
        }
    }

    fn sft_file(pairs: &[(&str, &str)]) -> TrainingFile {
        let records: Vec<_> = pairs
            .iter()
            .map(|(p, c)| {
                TrainingRecord::Sft(SftLine {
                    prompt: p.to_string(),
                    completion: c.to_string(),
                })
            })
            .collect();
        serialize(&records, Method::Sft).unwrap()
    }

    #[test]
    fn sft_memorizes_and_keeps_order() {
        let mock = MockBackend::new();
        let base = mock.model("m");
        let pairs: Vec<(String, String)> = (0..5).map(|i| (format!("p{i}"), format!("c{i}"))).collect();
        let borrowed: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let trained = mock.train(&base, &sft_file(&borrowed), &TrainingSpec::sft(3, 3e-4), StageTag::Sft).unwrap();
        let out = mock.generate(&trained, &request(&["p4", "p0", "p2", "p1", "p3"])).unwrap();
        assert_eq!(out, vec!["c4", "c0", "c2", "c1", "c3"]);
        assert!(base.lineage.is_empty());
        assert_eq!(trained.stages(), vec![StageTag::Sft]);
    }

    #[test]
    fn fallback_names_first_defined_label() {
        let mock = MockBackend::new();
        let space = Task::HateXplain.label_space();
        let post = Post {
            id: "1".into(),
            text: "hello".into(),
            platform: None,
        };
        let cls = render_classification_prompt(&post, &space);
        let cond = render_conditional_prompt(&post, "Hate", &space).unwrap();
        let out = mock
            .generate(
                &mock.model("m"),
                &GenerationRequest {
                    prompts: vec![cls, cond],
                    max_new_tokens: 8,
                    temperature: 0.0,
                    seed: 1,
                },
            )
            .unwrap();
        assert_eq!(out[0], "EXPLANATION: fallback.\nLABEL: Normal");
        assert_eq!(out[1], "EXPLANATION: fallback.\nLABEL: Hate");
    }

    #[test]
    fn dpo_binds_chosen_over_previous() {
        let mock = MockBackend::new();
        let sft = mock
            .train(&mock.model("m"), &sft_file(&[("p", "rejected")]), &TrainingSpec::sft(1, 1e-4), StageTag::Sft)
            .unwrap();
        assert_eq!(mock.generate(&sft, &request(&["p"])).unwrap(), vec!["rejected"]);
        let dpo = serialize(
            &[TrainingRecord::Dpo(DpoLine {
                prompt: "p".into(),
                chosen: "chosen".into(),
                rejected: "rejected".into(),
            })],
            Method::Dpo,
        )
        .unwrap();
        let aligned = mock.train(&sft, &dpo, &TrainingSpec::dpo(3, 5e-5), StageTag::Dpo).unwrap();
        assert_eq!(mock.generate(&aligned, &request(&["p"])).unwrap(), vec!["chosen"]);
        // The parent model still answers as before.
        assert_eq!(mock.generate(&sft, &request(&["p"])).unwrap(), vec!["rejected"]);
        assert_eq!(aligned.stages(), vec![StageTag::Sft, StageTag::Dpo]);
    }

    #[test]
    fn kto_binds_only_desirable() {
        let mock = MockBackend::new();
        let kto = serialize(
            &[
                TrainingRecord::Kto(KtoLine {
                    prompt: "p".into(),
                    completion: "bad".into(),
                    label: false,
                }),
                TrainingRecord::Kto(KtoLine {
                    prompt: "p".into(),
                    completion: "good".into(),
                    label: true,
                }),
                TrainingRecord::Kto(KtoLine {
                    prompt: "q".into(),
                    completion: "bad".into(),
                    label: false,
                }),
            ],
            Method::Kto,
        )
        .unwrap();
        let m = mock.train(&mock.model("m"), &kto, &TrainingSpec::kto(3, 5e-7), StageTag::Kto).unwrap();
        let out = mock.generate(&m, &request(&["p", "q"])).unwrap();
        assert_eq!(out[0], "good");
        assert_eq!(out[1], MockBackend::fallback_completion("q"));
    }

    #[test]
    fn kto_file_for_dpo_is_format_mismatch() {
        let mock = MockBackend::new();
        let kto = serialize(
            &[TrainingRecord::Kto(KtoLine {
                prompt: "p".into(),
                completion: "c".into(),
                label: true,
            })],
            Method::Kto,
        )
        .unwrap();
        let err = mock.train(&mock.model("m"), &kto, &TrainingSpec::dpo(1, 1e-5), StageTag::Dpo).unwrap_err();
        assert!(matches!(err, BackendError::FormatMismatch { expected: Method::Dpo, .. }));
        let disguised = TrainingFile {
            method: Method::Dpo,
            content: kto.content,
        };
        let err = mock.train(&mock.model("m"), &disguised, &TrainingSpec::dpo(1, 1e-5), StageTag::Dpo).unwrap_err();
        assert!(matches!(err, BackendError::FormatMismatch { .. }));
    }

    #[test]
    fn deterministic_and_unknown_lineage() {
        let mock = MockBackend::new();
        let m = mock
            .train(&mock.model("m"), &sft_file(&[("a", "b")]), &TrainingSpec::sft(1, 1e-4), StageTag::Sft)
            .unwrap();
        let r = request(&["a", "zzz", "a"]);
        assert_eq!(mock.generate(&m, &r).unwrap(), mock.generate(&m, &r).unwrap());
        let other = MockBackend::new();
        assert!(matches!(other.generate(&m, &r), Err(BackendError::UnknownModel(_))));
    }

    #[test]
    fn faults_and_state_persistence() {
        let mock = MockBackend::new();
        let m = mock
            .train(&mock.model("m"), &sft_file(&[("a", "b")]), &TrainingSpec::sft(1, 1e-4), StageTag::Sft)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mock.json");
        mock.save_state(&path).unwrap();
        let restored = MockBackend::load_state(&path).unwrap();
        assert_eq!(restored.generate(&m, &request(&["a"])).unwrap(), vec!["b"]);

        mock.set_unavailable(true);
        let err = mock.generate(&m, &request(&["a"])).unwrap_err();
        assert!(err.is_retryable());
        mock.set_unavailable(false);
        mock.fail_generation_for("m");
        assert!(matches!(mock.generate(&m, &request(&["a"])), Err(BackendError::GenerationFailed { .. })));
        mock.fail_training_for("m", StageTag::Dpo);
        let dpo = serialize(&[], Method::Dpo).unwrap();
        assert!(matches!(
            mock.train(&m, &dpo, &TrainingSpec::dpo(1, 1e-5), StageTag::Dpo),
            Err(BackendError::TrainingFailed(_))
        ));
        // Injected faults survive a save and load.
        mock.save_state(&path).unwrap();
        let restored = MockBackend::load_state(&path).unwrap();
        assert!(restored.generate(&m, &request(&["a"])).is_err());
        assert!(restored.train(&m, &dpo, &TrainingSpec::dpo(1, 1e-5), StageTag::Dpo).is_err());
    }
}
