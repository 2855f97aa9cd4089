use chrono::{DateTime, Utc};
use modkit_core::pipeline::ConsistentSample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Guidance shown with every pair. Annotators make one overall choice.
pub const CRITERIA: &str = "Pick the explanation you find better overall, judging both on:\n\
Clarity: the explanation is easy to follow and states its point plainly.\n\
Reasoning: the steps from the post to the label are sound and grounded in what the post says.\n\
Alignment: the explanation matches the label and its definition, naming the targeted group or entity when there is one.";

/// Optional self-reported background of an annotator. Never exported with votes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_band: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race_ethnicity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub education: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
    pub registered_at: DateTime<Utc>,
}

/// One explained post as produced by label-consistent collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSource {
    pub sample_id: String,
    pub text: String,
    pub gold_label: String,
    pub explanation_a: String,
    pub explanation_b: String,
}

impl From<ConsistentSample> for PairSource {
    fn from(s: ConsistentSample) -> Self {
        Self {
            sample_id: s.post_id,
            text: s.text,
            gold_label: s.gold_label,
            explanation_a: s.explanation_a,
            explanation_b: s.explanation_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub sample_id: String,
    pub annotator_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: String,
    pub model_a: String,
    pub model_b: String,
    pub assignments_per_item: usize,
    pub items: Vec<PairSource>,
    pub assignments: Vec<Assignment>,
    pub created_at: DateTime<Utc>,
}

impl Batch {
    pub fn item(&self, sample_id: &str) -> Option<&PairSource> {
        self.items.iter().find(|i| i.sample_id == sample_id)
    }

    pub fn is_assigned(&self, sample_id: &str, annotator_id: &str) -> bool {
        self.assignments.iter().any(|a| a.sample_id == sample_id && a.annotator_id == annotator_id)
    }
}

/// What a client sees for one pair. Model identity stays on the server: the
/// flip is recomputed at vote time and is never serialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub batch_id: String,
    pub sample_id: String,
    pub text: String,
    pub gold_label: String,
    pub explanation_first: String,
    pub explanation_second: String,
    pub criteria: String,
    #[serde(skip)]
    pub order_flip: bool,
}

impl AnnotationItem {
    pub fn new(batch_id: &str, source: &PairSource, order_flip: bool) -> Self {
        let (first, second) = if order_flip {
            (&source.explanation_b, &source.explanation_a)
        } else {
            (&source.explanation_a, &source.explanation_b)
        };
        Self {
            batch_id: batch_id.to_string(),
            sample_id: source.sample_id.clone(),
            text: source.text.clone(),
            gold_label: source.gold_label.clone(),
            explanation_first: first.clone(),
            explanation_second: second.clone(),
            criteria: CRITERIA.to_string(),
            order_flip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Choice {
    First,
    Second,
}

/// Model behind the chosen position. With `order_flip` the first slot shows model B.
pub fn resolve_choice(choice: Choice, order_flip: bool, model_a: &str, model_b: &str) -> String {
    let picked_b = matches!((choice, order_flip), (Choice::First, true) | (Choice::Second, false));
    if picked_b { model_b } else { model_a }.to_string()
}

/// Keyed hash of (seed, sample, annotator); the low bit of the first byte decides the order.
pub fn order_flip(seed: &str, sample_id: &str, annotator_id: &str) -> bool {
    let mut h = Sha256::new();
    for part in [seed, sample_id, annotator_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.finalize()[0] & 1 == 1
}

/// A vote as stored and exported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredVote {
    pub batch_id: String,
    pub sample_id: String,
    pub annotator_id: String,
    pub choice: Choice,
    pub resolved_model: String,
    pub timestamp: DateTime<Utc>,
    /// Position in the vote log, for stable ordering of equal timestamps.
    pub seq: u64,
}
