//! Self-augmented preference data.
//!
//! A model is asked to justify every label of the space for each pooled post.
//! The justification conditioned on the gold label is the preferred output;
//! the ones conditioned on the other labels are the dispreferred outputs.
//! From that set this module builds DPO pairs, KTO records and the two
//! fixed-size DPO sub-samples (by post and by pair).

mod format;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use format::{deserialize, detect_method, serialize, DpoLine, KtoLine, SftLine, TrainingFile, TrainingRecord};

use crate::backend::{generate_all, Backend, BackendError, GenerationSettings, Method, ModelRef};
use crate::corpus::{LabelSpace, ShotPool};
use crate::digest::derive_seed;
use crate::prompting::{format_completion, parse_response, render_classification_prompt, render_conditional_prompt, PredictedLabel, PromptError};

#[derive(Debug, thiserror::Error)]
pub enum PrefDataError {
    #[error("shot pool is empty")]
    EmptyPool,
    #[error("post {post_id} is missing a completion conditioned on {label}")]
    IncompleteSet { post_id: String, label: String },
    #[error("class {label} has {available} posts, {requested} requested")]
    ClassExhausted { label: String, available: usize, requested: usize },
    #[error("{requested} pairs requested but only {available} exist")]
    RequestTooLarge { requested: usize, available: usize },
    #[error("generation failed for post {post_id} conditioned on {label}: {source}")]
    Generation {
        post_id: String,
        label: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("record {index} is {found}, expected {expected}")]
    MixedMethods { expected: Method, found: Method, index: usize },
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One completion produced under a conditioned label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionedCompletion {
    pub completion: String,
    pub explanation: String,
    /// Label the model actually emitted.
    pub parsed_label: PredictedLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionedPost {
    pub post_id: String,
    pub gold_label: String,
    /// Classification prompt the preference data trains on.
    pub prompt: String,
    /// Conditioned label -> completion.
    pub completions: BTreeMap<String, ConditionedCompletion>,
}

/// Explanations for every (post, label) combination of a pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionedExplanationSet {
    /// Label-space order; pairs and records follow it.
    pub labels: Vec<String>,
    /// Pool order.
    pub posts: Vec<ConditionedPost>,
}

impl ConditionedExplanationSet {
    pub fn len(&self) -> usize {
        self.posts.iter().map(|p| p.completions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn post(&self, post_id: &str) -> Option<&ConditionedPost> {
        self.posts.iter().find(|p| p.post_id == post_id)
    }

    /// Fails on the first (post, label) without a completion.
    pub fn check_complete(&self) -> Result<(), PrefDataError> {
        for p in &self.posts {
            for l in &self.labels {
                if !p.completions.contains_key(l) {
                    return Err(PrefDataError::IncompleteSet {
                        post_id: p.post_id.clone(),
                        label: l.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub post_id: String,
    pub rejected_label: String,
}

impl PreferencePair {
    pub fn to_record(&self) -> TrainingRecord {
        TrainingRecord::Dpo(DpoLine {
            prompt: self.prompt.clone(),
            chosen: self.chosen.clone(),
            rejected: self.rejected.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListwiseRecord {
    pub prompt: String,
    pub completion: String,
    pub desirable: bool,
    pub post_id: String,
    pub conditioned_label: String,
}

impl ListwiseRecord {
    pub fn to_record(&self) -> TrainingRecord {
        TrainingRecord::Kto(KtoLine {
            prompt: self.prompt.clone(),
            completion: self.completion.clone(),
            label: self.desirable,
        })
    }
}

pub fn dpo_file(pairs: &[PreferencePair]) -> TrainingFile {
    let records: Vec<_> = pairs.iter().map(PreferencePair::to_record).collect();
    serialize(&records, Method::Dpo).expect("homogeneous by construction")
}

pub fn kto_file(records: &[ListwiseRecord]) -> TrainingFile {
    let records: Vec<_> = records.iter().map(ListwiseRecord::to_record).collect();
    serialize(&records, Method::Kto).expect("homogeneous by construction")
}

/// Ask `model` to justify each label of the space for every pooled post.
pub fn generate_conditioned_explanations(
    backend: &dyn Backend,
    model: &ModelRef,
    pool: &ShotPool,
    space: &LabelSpace,
    settings: &GenerationSettings,
) -> Result<ConditionedExplanationSet, PrefDataError> {
    if pool.is_empty() {
        return Err(PrefDataError::EmptyPool);
    }
    let mut prompts = Vec::with_capacity(pool.len() * space.len());
    for ex in &pool.examples {
        for label in space.labels() {
            prompts.push(render_conditional_prompt(&ex.post, label, space)?);
        }
    }
    let completions = generate_all(backend, model, prompts, settings).map_err(|e| match e {
        BackendError::GenerationFailed { index, .. } => {
            let ex = &pool.examples[(index / space.len()).min(pool.len() - 1)];
            PrefDataError::Generation {
                post_id: ex.post.id.clone(),
                label: space.labels()[index % space.len()].clone(),
                source: e,
            }
        }
        other => PrefDataError::Backend(other),
    })?;

    let mut completions = completions.into_iter();
    let posts = pool
        .examples
        .iter()
        .map(|ex| {
            let completions = space
                .labels()
                .iter()
                .map(|label| {
                    let raw = completions.next().expect("one completion per prompt");
                    let parsed = parse_response(&raw, space);
                    (
                        label.clone(),
                        ConditionedCompletion {
                            completion: raw,
                            explanation: parsed.explanation,
                            parsed_label: parsed.label,
                        },
                    )
                })
                .collect();
            ConditionedPost {
                post_id: ex.post.id.clone(),
                gold_label: ex.gold_label.clone(),
                prompt: render_classification_prompt(&ex.post, space).text,
                completions,
            }
        })
        .collect();
    Ok(ConditionedExplanationSet {
        labels: space.labels().to_vec(),
        posts,
    })
}

/// Completion used as the preferred side. When the model emitted some other
/// label, the explanation is kept and the label line rewritten to gold so the
/// preferred output never teaches a wrong answer.
fn chosen_completion(post: &ConditionedPost) -> String {
    let c = &post.completions[&post.gold_label];
    match &c.parsed_label {
        PredictedLabel::Label(l) if *l == post.gold_label => c.completion.clone(),
        _ => {
            let explanation = if c.explanation.is_empty() { c.completion.trim() } else { c.explanation.as_str() };
            format_completion(explanation, &post.gold_label)
        }
    }
}

fn pairs_for(cset: &ConditionedExplanationSet, post: &ConditionedPost) -> Vec<PreferencePair> {
    let chosen = chosen_completion(post);
    cset.labels
        .iter()
        .filter(|l| **l != post.gold_label)
        .map(|l| PreferencePair {
            prompt: post.prompt.clone(),
            chosen: chosen.clone(),
            rejected: post.completions[l].completion.clone(),
            post_id: post.post_id.clone(),
            rejected_label: l.clone(),
        })
        .collect()
}

/// One pair per (post, incorrect label), incorrect labels in label-space order.
pub fn build_dpo_pairs(cset: &ConditionedExplanationSet) -> Result<Vec<PreferencePair>, PrefDataError> {
    cset.check_complete()?;
    Ok(cset.posts.iter().flat_map(|p| pairs_for(cset, p)).collect())
}

/// One record per (post, label); only the gold-conditioned one is desirable.
pub fn build_kto_records(cset: &ConditionedExplanationSet) -> Result<Vec<ListwiseRecord>, PrefDataError> {
    cset.check_complete()?;
    let mut out = Vec::with_capacity(cset.len());
    for p in &cset.posts {
        for l in &cset.labels {
            let desirable = *l == p.gold_label;
            out.push(ListwiseRecord {
                prompt: p.prompt.clone(),
                completion: if desirable { chosen_completion(p) } else { p.completions[l].completion.clone() },
                desirable,
                post_id: p.post_id.clone(),
                conditioned_label: l.clone(),
            });
        }
    }
    Ok(out)
}

fn pool_posts<'a>(pool: &ShotPool, cset: &'a ConditionedExplanationSet) -> Result<Vec<&'a ConditionedPost>, PrefDataError> {
    cset.check_complete()?;
    pool.examples
        .iter()
        .map(|ex| {
            cset.post(ex.id()).ok_or_else(|| PrefDataError::IncompleteSet {
                post_id: ex.id().to_string(),
                label: ex.gold_label.clone(),
            })
        })
        .collect()
}

/// Fixed-size sub-sample by post: `k_prime` posts per class, each with all of
/// its pairs. Size `k_prime * |S| * (|S| - 1)`.
pub fn subsample_dpo_k(
    pool: &ShotPool,
    k_prime: usize,
    seed: u64,
    cset: &ConditionedExplanationSet,
) -> Result<Vec<PreferencePair>, PrefDataError> {
    let posts = pool_posts(pool, cset)?;
    let mut out = Vec::new();
    for label in &cset.labels {
        let mut members: Vec<&ConditionedPost> = posts.iter().copied().filter(|p| p.gold_label == *label).collect();
        if members.len() < k_prime {
            return Err(PrefDataError::ClassExhausted {
                label: label.clone(),
                available: members.len(),
                requested: k_prime,
            });
        }
        members.sort_by(|a, b| a.post_id.cmp(&b.post_id));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("dpo-k/{label}")));
        members.shuffle(&mut rng);
        for p in &members[..k_prime] {
            out.extend(pairs_for(cset, p));
        }
    }
    Ok(out)
}

/// Fixed-size sub-sample by pair: `k_prime * |S| * (|S| - 1)` distinct
/// (post, incorrect label) combinations drawn uniformly from the whole pool.
/// Output keeps pool order, then label order.
pub fn subsample_dpo_n(
    pool: &ShotPool,
    k_prime: usize,
    seed: u64,
    cset: &ConditionedExplanationSet,
) -> Result<Vec<PreferencePair>, PrefDataError> {
    let posts = pool_posts(pool, cset)?;
    let n = cset.labels.len();
    let requested = k_prime * n * n.saturating_sub(1);
    let all: Vec<PreferencePair> = posts.iter().flat_map(|p| pairs_for(cset, p)).collect();
    if requested > all.len() {
        return Err(PrefDataError::RequestTooLarge {
            requested,
            available: all.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "dpo-n"));
    let mut picked = rand::seq::index::sample(&mut rng, all.len(), requested).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| all[i].clone()).collect())
}

/// Number of distinct posts contributing to a set of pairs.
pub fn distinct_posts(pairs: &[PreferencePair]) -> usize {
    pairs.iter().map(|p| p.post_id.as_str()).collect::<HashSet<_>>().len()
}

/// Sidecar written next to a training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub method: Method,
    /// Short name of how the data was built, e.g. `dpo`, `kto`, `dpo-k`, `dpo-n`, `sft`.
    pub variant: String,
    pub pool_seed: u64,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_prime: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample_seed: Option<u64>,
    pub records: usize,
    pub distinct_posts: usize,
    pub digest: String,
}

impl DatasetManifest {
    pub fn new(file: &TrainingFile, variant: &str, pool: &ShotPool, distinct_posts: usize) -> Self {
        Self {
            method: file.method,
            variant: variant.to_string(),
            pool_seed: pool.seed,
            k: pool.k,
            k_prime: None,
            subsample_seed: None,
            records: file.len(),
            distinct_posts,
            digest: file.digest(),
        }
    }

    pub fn with_subsample(mut self, k_prime: usize, seed: u64) -> Self {
        self.k_prime = Some(k_prime);
        self.subsample_seed = Some(seed);
        self
    }
}
