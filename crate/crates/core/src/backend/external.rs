use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{check_training_input, Backend, BackendError, BackendKind, GenerationRequest, LineageEntry, ModelRef, StageTag, TrainingSpec};
use crate::digest::json_digest;
use crate::prefdata::TrainingFile;

/// Environment variable naming the adapter's root directory.
pub const ADAPTER_ROOT_ENV: &str = "MODKIT_ADAPTER_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Generate,
}

/// Contents of `jobs/<id>/spec.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub kind: JobKind,
    pub model: ModelRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Succeeded,
    Failed,
}

/// Contents of `jobs/<id>/result.json`, written by the adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Delegates work to an out-of-process trainer through a job directory.
///
/// For each job the backend writes `data.jsonl` then `spec.json` (atomically,
/// via rename) under `<root>/jobs/<id>/` and polls for `result.json`. Job ids
/// are content digests, so re-issuing an identical job picks up an existing
/// result instead of resubmitting. Training data is the serialized training
/// file; generation data is one `{"prompt": ...}` object per line.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    root: PathBuf,
    poll_interval: Duration,
    timeout: Duration,
    max_in_flight: usize,
}

#[derive(Serialize)]
struct PromptLine<'a> {
    prompt: &'a str,
}

impl ExternalBackend {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            poll_interval: Duration::from_millis(200),
            timeout: Duration::from_secs(24 * 3600),
            max_in_flight: 4,
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        std::env::var_os(ADAPTER_ROOT_ENV)
            .map(Self::new)
            .ok_or_else(|| BackendError::Unavailable(format!("{ADAPTER_ROOT_ENV} is not set")))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_poll_interval(mut self, interval: Duration) -> Self {
        self.poll_interval = interval;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn jobs_dir(&self) -> PathBuf {
        self.root.join("jobs")
    }

    fn submit(&self, spec: &JobSpec, data: &str) -> Result<JobResult, BackendError> {
        if !self.root.is_dir() {
            return Err(BackendError::Unavailable(format!("adapter root {} does not exist", self.root.display())));
        }
        let id = &json_digest(&(spec, crate::digest::sha256_hex(data)))[..16];
        let dir = self.jobs_dir().join(id);
        let result_path = dir.join("result.json");
        if !result_path.exists() {
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("data.jsonl"), data)?;
            let tmp = dir.join("spec.json.tmp");
            fs::write(&tmp, serde_json::to_vec_pretty(spec).map_err(std::io::Error::other)?)?;
            fs::rename(&tmp, dir.join("spec.json"))?;
        }
        self.wait_for(&result_path)
    }

    fn wait_for(&self, path: &Path) -> Result<JobResult, BackendError> {
        let start = Instant::now();
        loop {
            if let Ok(bytes) = fs::read(path) {
                // A half-written result parses as an error; retry until complete.
                if let Ok(result) = serde_json::from_slice::<JobResult>(&bytes) {
                    return Ok(result);
                }
            }
            if start.elapsed() >= self.timeout {
                return Err(BackendError::Unavailable(format!("no result at {} after {:?}", path.display(), self.timeout)));
            }
            std::thread::sleep(self.poll_interval);
        }
    }
}

impl Backend for ExternalBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::External
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn generate(&self, model: &ModelRef, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        let mut data = String::new();
        for p in &request.prompts {
            data.push_str(&serde_json::to_string(&PromptLine { prompt: &p.text }).expect("string encodes"));
            data.push('\n');
        }
        let spec = JobSpec {
            kind: JobKind::Generate,
            model: model.clone(),
            stage: None,
            training: None,
            max_new_tokens: Some(request.max_new_tokens),
            temperature: Some(request.temperature),
            seed: Some(request.seed),
        };
        let result = self.submit(&spec, &data)?;
        match result.status {
            JobStatus::Succeeded => {
                let outputs = result.outputs.unwrap_or_default();
                if outputs.len() != request.prompts.len() {
                    return Err(BackendError::GenerationFailed {
                        index: outputs.len().min(request.prompts.len()),
                        message: format!("adapter returned {} outputs for {} prompts", outputs.len(), request.prompts.len()),
                    });
                }
                Ok(outputs)
            }
            JobStatus::Failed => Err(BackendError::GenerationFailed {
                index: result.failed_index.unwrap_or(0),
                message: result.message.unwrap_or_else(|| "adapter reported failure".into()),
            }),
        }
    }

    fn train(&self, model: &ModelRef, dataset: &TrainingFile, spec: &TrainingSpec, stage: StageTag) -> Result<ModelRef, BackendError> {
        check_training_input(dataset, spec, stage)?;
        crate::prefdata::deserialize(dataset).map_err(|e| BackendError::FormatMismatch {
            expected: spec.method,
            reason: e.to_string(),
        })?;
        let job = JobSpec {
            kind: JobKind::Train,
            model: model.clone(),
            stage: Some(stage),
            training: Some(spec.clone()),
            max_new_tokens: None,
            temperature: None,
            seed: None,
        };
        let result = self.submit(&job, &dataset.content)?;
        match (result.status, result.checkpoint) {
            (JobStatus::Succeeded, Some(checkpoint)) => Ok(model.extended(
                LineageEntry {
                    stage,
                    spec_digest: spec.digest(),
                    data_digest: dataset.digest(),
                },
                Some(checkpoint),
            )),
            (JobStatus::Succeeded, None) => Err(BackendError::TrainingFailed("adapter returned no checkpoint id".into())),
            (JobStatus::Failed, _) => Err(BackendError::TrainingFailed(result.message.unwrap_or_else(|| "adapter reported failure".into()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Method;
    use crate::prefdata::{serialize, SftLine, TrainingRecord};
    use crate::prompting::{PromptKind, RenderedPrompt};
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;

    /// Minimal adapter: echoes prompts upper-cased and names checkpoints by job id.
    fn spawn_adapter(root: PathBuf, stop: Arc<AtomicBool>) -> std::thread::JoinHandle<usize> {
        std::thread::spawn(move || {
            let mut handled = 0;
            while !stop.load(Ordering::SeqCst) {
                if let Ok(entries) = fs::read_dir(root.join("jobs")) {
                    for entry in entries.flatten() {
                        let dir = entry.path();
                        let spec_path = dir.join("spec.json");
                        if !spec_path.exists() || dir.join("result.json").exists() {
                            continue;
                        }
                        let spec: JobSpec = serde_json::from_slice(&fs::read(&spec_path).unwrap()).unwrap();
                        let data = fs::read_to_string(dir.join("data.jsonl")).unwrap();
                        let result = match spec.kind {
                            JobKind::Train => JobResult {
                                status: JobStatus::Succeeded,
                                checkpoint: Some(format!("ckpt-{}", dir.file_name().unwrap().to_string_lossy())),
                                outputs: None,
                                failed_index: None,
                                message: None,
                            },
                            JobKind::Generate => JobResult {
                                status: JobStatus::Succeeded,
                                checkpoint: None,
                                outputs: Some(
                                    data.lines()
                                        .map(|l| {
                                            let v: serde_json::Value = serde_json::from_str(l).unwrap();
                                            v["prompt"].as_str().unwrap().to_uppercase()
                                        })
                                        .collect(),
                                ),
                                failed_index: None,
                                message: None,
                            },
                        };
                        fs::write(dir.join("result.json"), serde_json::to_vec(&result).unwrap()).unwrap();
                        handled += 1;
                    }
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            handled
        })
    }

    #[test]
    fn round_trip_through_job_directory() {
        let root = tempfile::tempdir().unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let adapter = spawn_adapter(root.path().to_path_buf(), stop.clone());
        let backend = ExternalBackend::new(root.path())
            .with_poll_interval(Duration::from_millis(5))
            .with_timeout(Duration::from_secs(20));

        let base = ModelRef::base("llama", BackendKind::External);
        let file = serialize(
            &[TrainingRecord::Sft(SftLine {
                prompt: "p".into(),
                completion: "c".into(),
            })],
            Method::Sft,
        )
        .unwrap();
        let trained = backend.train(&base, &file, &TrainingSpec::sft(3, 3e-4), StageTag::Sft).unwrap();
        assert!(trained.checkpoint.as_deref().unwrap().starts_with("ckpt-"));
        assert_eq!(trained.stages(), vec![StageTag::Sft]);

        let request = GenerationRequest {
            prompts: ["a", "b", "c"]
                .iter()
                .map(|t| RenderedPrompt {
                    text: t.to_string(),
                    kind: PromptKind::Classification,
                    post_id: t.to_string(),
                    conditioned_label: None,
                })
                .collect(),
            max_new_tokens: 16,
            temperature: 0.0,
            seed: 0,
        };
        assert_eq!(backend.generate(&trained, &request).unwrap(), vec!["A", "B", "C"]);
        // An identical job reuses the stored result.
        assert_eq!(backend.generate(&trained, &request).unwrap(), vec!["A", "B", "C"]);

        stop.store(true, Ordering::SeqCst);
        assert_eq!(adapter.join().unwrap(), 2);
        let job_dirs: Vec<_> = fs::read_dir(root.path().join("jobs")).unwrap().flatten().collect();
        for d in job_dirs {
            for f in ["spec.json", "data.jsonl", "result.json"] {
                assert!(d.path().join(f).exists());
            }
        }
    }

    #[test]
    fn missing_root_is_unavailable() {
        let backend = ExternalBackend::new("/nonexistent/adapter/root");
        let file = serialize(&[], Method::Sft).unwrap();
        let err = backend
            .train(&ModelRef::base("m", BackendKind::External), &file, &TrainingSpec::sft(1, 1e-4), StageTag::Sft)
            .unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn times_out_without_adapter() {
        let root = tempfile::tempdir().unwrap();
        let backend = ExternalBackend::new(root.path())
            .with_poll_interval(Duration::from_millis(5))
            .with_timeout(Duration::from_millis(30));
        let file = serialize(&[], Method::Sft).unwrap();
        let err = backend
            .train(&ModelRef::base("m", BackendKind::External), &file, &TrainingSpec::sft(1, 1e-4), StageTag::Sft)
            .unwrap_err();
        assert!(matches!(err, BackendError::Unavailable(_)));
    }

    #[test]
    fn failed_result_surfaces_index() {
        let root = tempfile::tempdir().unwrap();
        let backend = ExternalBackend::new(root.path()).with_poll_interval(Duration::from_millis(5));
        let model = ModelRef::base("m", BackendKind::External);
        let request = GenerationRequest {
            prompts: vec![],
            max_new_tokens: 1,
            temperature: 0.0,
            seed: 0,
        };
        // Pre-stage a failed result under the id the backend will compute.
        let spec = JobSpec {
            kind: JobKind::Generate,
            model: model.clone(),
            stage: None,
            training: None,
            max_new_tokens: Some(1),
            temperature: Some(0.0),
            seed: Some(0),
        };
        let id = &json_digest(&(&spec, crate::digest::sha256_hex("")))[..16];
        let dir = root.path().join("jobs").join(id);
        fs::create_dir_all(&dir).unwrap();
        let failed = JobResult {
            status: JobStatus::Failed,
            checkpoint: None,
            outputs: None,
            failed_index: Some(3),
            message: Some("oom".into()),
        };
        fs::write(dir.join("result.json"), serde_json::to_vec(&failed).unwrap()).unwrap();
        let err = backend.generate(&model, &request).unwrap_err();
        assert!(matches!(err, BackendError::GenerationFailed { index: 3, .. }));
    }
}
