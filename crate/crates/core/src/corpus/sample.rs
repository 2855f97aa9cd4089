use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, LabelSpace, LabeledExample, Result, SplitTag};
use crate::digest::derive_seed;

/// What to do when a class has fewer members than requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Fail with [`CorpusError::ClassExhausted`].
    #[default]
    Strict,
    /// Take every member and record the class as deficient.
    Lenient,
}

/// K examples per class drawn from one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotPool {
    pub k: usize,
    pub examples: Vec<LabeledExample>,
    pub source_split: SplitTag,
    pub seed: u64,
    /// Labels that had fewer than `k` members (lenient mode only).
    #[serde(default)]
    pub deficient: Vec<String>,
}

impl ShotPool {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(LabeledExample::id)
    }

    pub fn of_class<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a LabeledExample> + 'a {
        self.examples.iter().filter(move |e| e.gold_label == label)
    }
}

/// Per-class sample reserved for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSubset {
    pub source_split: SplitTag,
    pub k_per_class: usize,
    pub seed: u64,
    pub examples: Vec<LabeledExample>,
    #[serde(default)]
    pub deficient: Vec<String>,
}

/// Uniform K-shot sample per class, without replacement.
///
/// Each class is put in a seeded random order and the first `k` members are
/// taken, so for a fixed seed the pool for a smaller K is a prefix (and a
/// subset) of the pool for a larger K.
pub fn sample_k_shot(
    examples: &[LabeledExample],
    source: SplitTag,
    space: &LabelSpace,
    k: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<ShotPool> {
    if k == 0 {
        return Err(CorpusError::ZeroShots);
    }
    let (examples, deficient) = take_ranked(examples, space, "shots", seed, 0..k, mode)?;
    Ok(ShotPool {
        k,
        examples,
        source_split: source,
        seed,
        deficient,
    })
}

/// The `k` shots per class that follow the K-shot pool in the same seeded
/// order: the second half of the 2K pool. Disjoint from
/// `sample_k_shot(.., k, seed, ..)` by construction.
pub fn complementary_pool(
    examples: &[LabeledExample],
    source: SplitTag,
    space: &LabelSpace,
    k: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<ShotPool> {
    if k == 0 {
        return Err(CorpusError::ZeroShots);
    }
    let (examples, deficient) = take_ranked(examples, space, "shots", seed, k..2 * k, mode)?;
    Ok(ShotPool {
        k,
        examples,
        source_split: source,
        seed,
        deficient,
    })
}

/// Evaluation-only per-class subset of the validation or test split.
pub fn sample_eval_subset(
    examples: &[LabeledExample],
    source: SplitTag,
    space: &LabelSpace,
    k_per_class: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<EvalSubset> {
    if source == SplitTag::Train {
        return Err(CorpusError::TrainSplitForEval);
    }
    if k_per_class == 0 {
        return Err(CorpusError::ZeroShots);
    }
    let salt = format!("eval/{source}");
    let (examples, deficient) = take_ranked(examples, space, &salt, seed, 0..k_per_class, mode)?;
    Ok(EvalSubset {
        source_split: source,
        k_per_class,
        seed,
        examples,
        deficient,
    })
}

fn take_ranked(
    examples: &[LabeledExample],
    space: &LabelSpace,
    salt: &str,
    seed: u64,
    window: Range<usize>,
    mode: SampleMode,
) -> Result<(Vec<LabeledExample>, Vec<String>)> {
    let mut out = Vec::new();
    let mut deficient = Vec::new();
    for label in space.labels() {
        let mut members: Vec<&LabeledExample> = examples.iter().filter(|e| &e.gold_label == label).collect();
        members.sort_by(|a, b| a.id().cmp(b.id()));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{salt}/{label}")));
        members.shuffle(&mut rng);
        if members.len() < window.end {
            if mode == SampleMode::Strict {
                return Err(CorpusError::ClassExhausted {
                    label: label.clone(),
                    available: members.len().saturating_sub(window.start),
                    requested: window.len(),
                });
            }
            deficient.push(label.clone());
        }
        let end = window.end.min(members.len());
        let start = window.start.min(end);
        out.extend(members[start..end].iter().map(|e| (*e).clone()));
    }
    Ok((out, deficient))
}
