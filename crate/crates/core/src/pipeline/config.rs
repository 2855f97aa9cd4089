use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::backend::{GenerationSettings, Method};
use crate::corpus::{SampleMode, SplitRatios, Task};
use crate::digest::json_digest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Identifier passed to the backend.
    pub name: String,
    /// Family used for hyperparameter lookup, e.g. `T5` or `Llama`.
    pub family: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    MacroF1,
    Accuracy,
}

impl Metric {
    pub fn of(self, report: &crate::evalkit::EvalReport) -> f64 {
        match self {
            Metric::MacroF1 => report.macro_f1,
            Metric::Accuracy => report.accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub sampling: u64,
    pub generation: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            sampling: 42,
            generation: 0,
        }
    }
}

/// Fixed-size DPO variants trained from the pool of size `pool_k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsamplingConfig {
    #[serde(default = "default_pool_k")]
    pub pool_k: usize,
    #[serde(default = "default_k_primes")]
    pub k_primes: Vec<usize>,
}

fn default_pool_k() -> usize {
    256
}

fn default_k_primes() -> Vec<usize> {
    vec![128, 192]
}

impl Default for SubsamplingConfig {
    fn default() -> Self {
        Self {
            pool_k: default_pool_k(),
            k_primes: default_k_primes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Per-class validation subset size; task preset when absent.
    #[serde(default)]
    pub k_val: Option<usize>,
    /// Per-class test subset size; task preset when absent.
    #[serde(default)]
    pub k_test: Option<usize>,
    /// Also score Stage 1 models on the test subset (reported, never used for selection).
    #[serde(default = "yes")]
    pub test_in_stage1: bool,
}

fn yes() -> bool {
    true
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_val: None,
            k_test: None,
            test_in_stage1: true,
        }
    }
}

/// Declarative plan for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub models: Vec<ModelSpec>,
    pub k_schedule: Vec<usize>,
    #[serde(default = "default_method")]
    pub alignment_method: Method,
    #[serde(default = "default_k_check")]
    pub k_check: usize,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub seeds: Seeds,
    /// SFT corpus (prompt/completion JSON lines) applied to every base model first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auxiliary_sft: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsampling: Option<SubsamplingConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Overrides the task's split ratios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_ratios: Option<SplitRatios>,
    #[serde(default)]
    pub sample_mode: SampleMode,
    #[serde(default)]
    pub generation: GenerationSettings,
    /// Cells of one K trained at the same time.
    #[serde(default = "one")]
    pub max_parallel_cells: usize,
    /// Labeled JSON-lines dataset, for runs started from the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Seed explanations merged into `dataset` by post id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanations: Option<PathBuf>,
}

fn default_method() -> Method {
    Method::Dpo
}

fn default_k_check() -> usize {
    128
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn new(task: Task, models: Vec<ModelSpec>, k_schedule: Vec<usize>) -> Self {
        let k_check = if k_schedule.contains(&default_k_check()) {
            default_k_check()
        } else {
            k_schedule.last().copied().unwrap_or(0)
        };
        Self {
            task,
            models,
            k_schedule,
            alignment_method: default_method(),
            k_check,
            metric: Metric::default(),
            seeds: Seeds::default(),
            auxiliary_sft: None,
            subsampling: None,
            eval: EvalConfig::default(),
            split_ratios: None,
            sample_mode: SampleMode::default(),
            generation: GenerationSettings::default(),
            max_parallel_cells: 1,
            dataset: None,
            explanations: None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn ratios(&self) -> SplitRatios {
        self.split_ratios.unwrap_or(self.task.preset().ratios)
    }

    pub fn k_val(&self) -> usize {
        self.eval.k_val.unwrap_or(self.task.preset().k_val)
    }

    pub fn k_test(&self) -> usize {
        self.eval.k_test.unwrap_or(self.task.preset().k_test)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.name.trim().is_empty() {
                return bad(format!("model {i} has an empty name"));
            }
            if self.models[..i].iter().any(|o| o.name == m.name) {
                return bad(format!("model {} listed twice", m.name));
            }
        }
        if self.k_schedule.is_empty() {
            return bad("k_schedule is empty".into());
        }
        if self.k_schedule[0] == 0 || self.k_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("k_schedule {:?} must be positive and strictly increasing", self.k_schedule));
        }
        if !self.k_schedule.contains(&self.k_check) {
            return bad(format!("k_check {} is not in the schedule", self.k_check));
        }
        if self.alignment_method == Method::Sft {
            return bad("alignment_method must be DPO or KTO".into());
        }
        if let Some(sub) = &self.subsampling {
            if let Some(k) = sub.k_primes.iter().find(|k| **k == 0 || **k > sub.pool_k) {
                return bad(format!("k' {k} must be in 1..={}", sub.pool_k));
            }
        }
        if let Some(r) = self.split_ratios {
            r.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        }
        if self.max_parallel_cells == 0 {
            return bad("max_parallel_cells must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> Vec<ModelSpec> {
        vec![
            ModelSpec {
                name: "t5".into(),
                family: "T5".into(),
            },
            ModelSpec {
                name: "llama".into(),
                family: "Llama".into(),
            },
        ]
    }

    #[test]
    fn minimal_json_gets_defaults() {
        let json = r#"{"task":"hatexplain","models":[{"name":"t5","family":"T5"}],"k_schedule":[16,32,64,128]}"#;
        let c: RunConfig = serde_json::from_str(json).unwrap();
        c.validate().unwrap();
        assert_eq!(c.alignment_method, Method::Dpo);
        assert_eq!(c.k_check, 128);
        assert_eq!(c.k_val(), 50);
        assert_eq!(c.k_test(), 400);
        assert_eq!(c.metric, Metric::MacroF1);
    }

    #[test]
    fn invalid_configs() {
        let mut c = RunConfig::new(Task::HateXplain, models(), vec![16, 32]);
        assert_eq!(c.k_check, 32);
        c.validate().unwrap();
        c.k_check = 64;
        assert!(c.validate().is_err());
        let mut c = RunConfig::new(Task::HateXplain, models(), vec![32, 16]);
        c.k_check = 16;
        assert!(c.validate().is_err());
        let mut c = RunConfig::new(Task::HateXplain, vec![], vec![16]);
        assert!(c.validate().is_err());
        c.models = models();
        c.alignment_method = Method::Sft;
        assert!(c.validate().is_err());
        c.alignment_method = Method::Kto;
        c.subsampling = Some(SubsamplingConfig {
            pool_k: 256,
            k_primes: vec![300],
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_ignores_formatting() {
        let c = RunConfig::new(Task::LatentHate, models(), vec![16]);
        let pretty = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&pretty).unwrap();
        assert_eq!(back.digest(), c.digest());
    }
}
