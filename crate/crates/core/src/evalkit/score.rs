use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::corpus::LabelSpace;
use crate::prompting::{parse_response, PredictedLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Scores for one model on one evaluation set.
///
/// JSON keys: `task`, `model`, `variant`, `model_digest`, `macro_f1`,
/// `accuracy`, `per_class` (label -> precision/recall/f1/support, in
/// label-space order), `invalid_count`, `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    /// Display name, e.g. the model family.
    #[serde(default)]
    pub model: String,
    /// What was evaluated, e.g. `K=64 DPO`.
    #[serde(default)]
    pub variant: String,
    #[serde(default)]
    pub model_digest: String,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class: IndexMap<String, ClassMetrics>,
    pub invalid_count: usize,
    pub n: usize,
}

impl EvalReport {
    pub fn labelled(mut self, model: impl Into<String>, variant: impl Into<String>, model_digest: impl Into<String>) -> Self {
        self.model = model.into();
        self.variant = variant.into();
        self.model_digest = model_digest.into();
        self
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-F1 and per-class metrics over `(gold, predicted)` pairs.
///
/// An [`PredictedLabel::Invalid`] prediction is a miss for its gold class and
/// a false positive for no class. Classes without support still count toward
/// the macro average with F1 = 0.
pub fn score(predictions: &[(String, PredictedLabel)], space: &LabelSpace) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n_labels = space.len();
    let mut tp = vec![0usize; n_labels];
    let mut fp = vec![0usize; n_labels];
    let mut support = vec![0usize; n_labels];
    let mut invalid = 0;
    for (gold, pred) in predictions {
        let g = space.index_of(gold).ok_or_else(|| EvalError::UnknownLabel(gold.clone()))?;
        support[g] += 1;
        match pred {
            PredictedLabel::Invalid => invalid += 1,
            PredictedLabel::Label(p) => {
                let p = space.index_of(p).ok_or_else(|| EvalError::UnknownLabel(p.clone()))?;
                if p == g {
                    tp[g] += 1;
                } else {
                    fp[p] += 1;
                }
            }
        }
    }
    let mut per_class = IndexMap::new();
    for (i, label) in space.labels().iter().enumerate() {
        let precision = ratio(tp[i], tp[i] + fp[i]);
        let recall = ratio(tp[i], support[i]);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        per_class.insert(
            label.clone(),
            ClassMetrics {
                precision,
                recall,
                f1,
                support: support[i],
            },
        );
    }
    let macro_f1 = per_class.values().map(|m| m.f1).sum::<f64>() / n_labels as f64;
    Ok(EvalReport {
        task: space.task_name().to_string(),
        model: String::new(),
        variant: String::new(),
        model_digest: String::new(),
        macro_f1,
        accuracy: ratio(tp.iter().sum(), predictions.len()),
        per_class,
        invalid_count: invalid,
        n: predictions.len(),
    })
}

/// Parse raw completions, then [`score`] them.
pub fn score_responses(golds_and_raw: &[(String, String)], space: &LabelSpace) -> Result<EvalReport> {
    let preds: Vec<_> = golds_and_raw.iter().map(|(g, raw)| (g.clone(), parse_response(raw, space).label)).collect();
    score(&preds, space)
}
