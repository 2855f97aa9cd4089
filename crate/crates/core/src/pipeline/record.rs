use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::hyper::Technique;
use super::Result;
use crate::backend::{ModelRef, StageTag, TrainingSpec};
use crate::evalkit::EvalReport;
use crate::prefdata::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStage {
    Stage1,
    Stage2,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CellStatus {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    Train { stage: StageTag, spec: TrainingSpec },
    Generate { prompts: usize },
}

/// One training or generation step inside a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(flatten)]
    pub kind: StepKind,
    pub model_in: ModelRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_out: Option<ModelRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetManifest>,
    /// Validation score of `model_out`, when measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<EvalReport>,
    pub at: String,
}

/// One (model, K, technique) combination, or one cross-model pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_id: String,
    /// Position in the run plan; the manifest lists cells in this order.
    pub ordinal: usize,
    pub stage: RunStage,
    pub model: String,
    /// Position of `model` in the config, for tie-breaking.
    pub model_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterpart: Option<String>,
    pub k: usize,
    pub technique: Technique,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_model: Option<ModelRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<EvalReport>,
    pub started_at: String,
    pub finished_at: String,
}

impl CellRecord {
    pub fn succeeded(&self) -> bool {
        self.status == CellStatus::Succeeded
    }

    /// Validation score after the step that trained `stage`, if recorded.
    pub fn val_after(&self, stage: StageTag) -> Option<&EvalReport> {
        self.steps.iter().rev().find_map(|s| match &s.kind {
            StepKind::Train { stage: st, .. } if *st == stage => s.val.as_ref(),
            _ => None,
        })
    }
}

/// Manifest of one run: the config digest and every finished cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub stage: RunStage,
    pub config_digest: String,
    pub started_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    pub cells: Vec<CellRecord>,
}

impl RunRecord {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.succeeded()).count()
    }

    pub fn cell(&self, cell_id: &str) -> Option<&CellRecord> {
        self.cells.iter().find(|c| c.cell_id == cell_id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub(crate) fn now() -> String {
    let t: DateTime<Utc> = Utc::now();
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Append-only run record shared by concurrently running cells.
///
/// With a directory attached, each appended cell is also written as one line
/// to `events.jsonl` and the full record is rewritten to `manifest.json`.
#[derive(Debug)]
pub struct RunLog {
    record: Mutex<RunRecord>,
    dir: Option<PathBuf>,
}

impl RunLog {
    pub fn new(run_id: &str, stage: RunStage, config_digest: &str, dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
            let events = d.join("events.jsonl");
            if events.exists() {
                fs::remove_file(events)?;
            }
        }
        let log = Self {
            record: Mutex::new(RunRecord {
                run_id: run_id.to_string(),
                stage,
                config_digest: config_digest.to_string(),
                started_at: now(),
                finished_at: None,
                cells: Vec::new(),
            }),
            dir,
        };
        log.persist(&log.record.lock().expect("run log poisoned"))?;
        Ok(log)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn persist(&self, record: &RunRecord) -> Result<()> {
        if let Some(d) = &self.dir {
            let tmp = d.join("manifest.json.tmp");
            fs::write(&tmp, serde_json::to_string_pretty(record)?)?;
            fs::rename(tmp, d.join("manifest.json"))?;
        }
        Ok(())
    }

    pub fn append(&self, cell: CellRecord) -> Result<()> {
        let mut record = self.record.lock().expect("run log poisoned");
        if let Some(d) = &self.dir {
            let mut f = OpenOptions::new().create(true).append(true).open(d.join("events.jsonl"))?;
            writeln!(f, "{}", serde_json::to_string(&cell)?)?;
        }
        record.cells.push(cell);
        self.persist(&record)
    }

    pub fn snapshot(&self) -> RunRecord {
        self.record.lock().expect("run log poisoned").clone()
    }

    pub fn finish(self) -> Result<RunRecord> {
        let mut record = self.record.into_inner().expect("run log poisoned");
        record.cells.sort_by_key(|c| c.ordinal);
        record.finished_at = Some(now());
        if let Some(d) = &self.dir {
            let tmp = d.join("manifest.json.tmp");
            fs::write(&tmp, serde_json::to_string_pretty(&record)?)?;
            fs::rename(tmp, d.join("manifest.json"))?;
        }
        Ok(record)
    }
}
