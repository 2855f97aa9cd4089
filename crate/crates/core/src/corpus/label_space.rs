use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Result, SplitRatios};

/// Ordered label names for one task, each with its definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSpace", into = "RawLabelSpace")]
pub struct LabelSpace {
    task_name: String,
    labels: Vec<String>,
    definitions: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct RawLabelSpace {
    task_name: String,
    labels: Vec<String>,
    definitions: BTreeMap<String, String>,
}

impl TryFrom<RawLabelSpace> for LabelSpace {
    type Error = CorpusError;

    fn try_from(raw: RawLabelSpace) -> Result<Self> {
        LabelSpace::new(raw.task_name, raw.labels, raw.definitions)
    }
}

impl From<LabelSpace> for RawLabelSpace {
    fn from(space: LabelSpace) -> Self {
        RawLabelSpace {
            task_name: space.task_name,
            labels: space.labels,
            definitions: space.definitions,
        }
    }
}

impl LabelSpace {
    pub fn new(
        task_name: impl Into<String>,
        labels: Vec<String>,
        definitions: BTreeMap<String, String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(CorpusError::InvalidLabelSpace("no labels".into()));
        }
        for (i, label) in labels.iter().enumerate() {
            if label.trim().is_empty() {
                return Err(CorpusError::InvalidLabelSpace("empty label name".into()));
            }
            if labels[..i].iter().any(|l| l.to_lowercase() == label.to_lowercase()) {
                return Err(CorpusError::InvalidLabelSpace(format!("duplicate label {label:?}")));
            }
            match definitions.get(label) {
                Some(d) if !d.trim().is_empty() => {}
                _ => {
                    return Err(CorpusError::InvalidLabelSpace(format!(
                        "label {label:?} has no definition"
                    )))
                }
            }
        }
        if let Some(extra) = definitions.keys().find(|k| !labels.contains(k)) {
            return Err(CorpusError::InvalidLabelSpace(format!(
                "definition for {extra:?} which is not a label"
            )));
        }
        Ok(Self {
            task_name: task_name.into(),
            labels,
            definitions,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| CorpusError::InvalidLabelSpace(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn task_name(&self) -> &str {
        &self.task_name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// |S|
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn definition(&self, label: &str) -> Option<&str> {
        self.definitions.get(label).map(String::as_str)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Case-insensitive lookup returning the canonical label name.
    pub fn resolve(&self, candidate: &str) -> Option<&str> {
        let wanted = candidate.trim().to_lowercase();
        self.labels
            .iter()
            .find(|l| l.to_lowercase() == wanted)
            .map(String::as_str)
    }
}

/// The three moderation tasks shipped with the toolkit.
///
/// Serialized as its slug; parsing ignores case and punctuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Task {
    HateXplain,
    LatentHate,
    ImplicitHate,
}

/// Dataset facts for a shipped task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskPreset {
    pub total_size: usize,
    pub ratios: SplitRatios,
    /// Per-class size of the validation subset used for tuning.
    pub k_val: usize,
    /// Per-class size of the test subset.
    pub k_test: usize,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::HateXplain, Task::LatentHate, Task::ImplicitHate];

    pub fn slug(self) -> &'static str {
        match self {
            Task::HateXplain => "hatexplain",
            Task::LatentHate => "latent_hate",
            Task::ImplicitHate => "implicit_hate",
        }
    }

    pub fn label_space(self) -> LabelSpace {
        let json = match self {
            Task::HateXplain => include_str!("../../data/labelspaces/hatexplain.json"),
            Task::LatentHate => include_str!("../../data/labelspaces/latent_hate.json"),
            Task::ImplicitHate => include_str!("../../data/labelspaces/implicit_hate.json"),
        };
        LabelSpace::from_json(json).expect("shipped label spaces are valid")
    }

    pub fn preset(self) -> TaskPreset {
        match self {
            Task::HateXplain => TaskPreset {
                total_size: 20_148,
                ratios: SplitRatios::new(0.6, 0.2, 0.2),
                k_val: 50,
                k_test: 400,
            },
            Task::LatentHate => TaskPreset {
                total_size: 19_112,
                ratios: SplitRatios::new(0.6, 0.2, 0.2),
                k_val: 50,
                k_test: 400,
            },
            Task::ImplicitHate => TaskPreset {
                total_size: 4_153,
                ratios: SplitRatios::new(0.5, 0.2, 0.3),
                k_val: 50,
                k_test: 150,
            },
        }
    }

    /// Match a task by slug or by the label space's task name.
    pub fn from_task_name(name: &str) -> Option<Task> {
        name.parse().ok()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl From<Task> for String {
    fn from(t: Task) -> String {
        t.slug().to_string()
    }
}

impl TryFrom<String> for Task {
    type Error = CorpusError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Task {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match norm.as_str() {
            "hatexplain" => Ok(Task::HateXplain),
            "latenthate" => Ok(Task::LatentHate),
            "implicithate" => Ok(Task::ImplicitHate),
            _ => Err(CorpusError::UnknownTask(s.to_string())),
        }
    }
}
