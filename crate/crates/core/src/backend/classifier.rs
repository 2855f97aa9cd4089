//! Lightweight supervised text classifier.
//!
//! Texts become L2-normalized bags of hashed word unigrams and bigrams; a
//! multinomial logistic regression is fitted with seeded SGD. Used both to
//! tell two models' writing apart and as the full-data encoder baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ClassifierError {
    #[error("corpus for class {0:?} is empty")]
    EmptyCorpus(String),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("duplicate class {0:?}")]
    DuplicateClass(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub epochs: u32,
    pub learning_rate: f64,
    /// Feature space has `2^feature_bits` buckets.
    pub feature_bits: u32,
    pub seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            epochs: 8,
            learning_rate: 0.5,
            feature_bits: 18,
            seed: 0,
        }
    }
}

/// Class probabilities for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
}

impl LabelDistribution {
    /// Most probable label; ties go to the earlier class.
    pub fn argmax(&self) -> &str {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        &self.labels[best]
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probs[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextClassifier {
    classes: Vec<String>,
    feature_bits: u32,
    /// Row-major `classes x 2^feature_bits`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sparse (bucket, value) features, merged and L2-normalized.
fn featurize(text: &str, bits: u32) -> Vec<(usize, f64)> {
    let mask = (1u64 << bits) - 1;
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
    let mut buckets: Vec<usize> = Vec::with_capacity(tokens.len() * 2);
    for t in &tokens {
        buckets.push((fnv1a(format!("u:{t}").as_bytes()) & mask) as usize);
    }
    for w in tokens.windows(2) {
        buckets.push((fnv1a(format!("b:{} {}", w[0], w[1]).as_bytes()) & mask) as usize);
    }
    buckets.sort_unstable();
    let mut feats: Vec<(usize, f64)> = Vec::new();
    for b in buckets {
        match feats.last_mut() {
            Some((last, v)) if *last == b => *v += 1.0,
            _ => feats.push((b, 1.0)),
        }
    }
    let norm = feats.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut feats {
            *v /= norm;
        }
    }
    feats
}

fn softmax(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

impl TextClassifier {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    fn dim(&self) -> usize {
        1 << self.feature_bits
    }

    fn probs(&self, feats: &[(usize, f64)]) -> Vec<f64> {
        let dim = self.dim();
        let mut scores: Vec<f64> = (0..self.classes.len())
            .map(|c| self.bias[c] + feats.iter().map(|(i, v)| self.weights[c * dim + i] * v).sum::<f64>())
            .collect();
        softmax(&mut scores);
        scores
    }

    pub fn predict_proba(&self, text: &str) -> LabelDistribution {
        LabelDistribution {
            labels: self.classes.clone(),
            probs: self.probs(&featurize(text, self.feature_bits)),
        }
    }

    pub fn classify(&self, texts: &[String]) -> Vec<LabelDistribution> {
        texts.iter().map(|t| self.predict_proba(t)).collect()
    }

    pub fn predict(&self, text: &str) -> String {
        self.predict_proba(text).argmax().to_string()
    }

    /// Fraction of `(text, label)` pairs predicted correctly; 0 when empty.
    pub fn accuracy<'a>(&self, labeled: impl IntoIterator<Item = (&'a str, &'a str)>) -> f64 {
        let (mut hit, mut n) = (0usize, 0usize);
        for (text, label) in labeled {
            n += 1;
            if self.predict(text) == label {
                hit += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    }
}

/// Fit a classifier over named corpora, one per class, in the given order.
pub fn train_text_classifier(corpora: &[(String, Vec<String>)], spec: &ClassifierSpec) -> Result<TextClassifier, ClassifierError> {
    if corpora.len() < 2 {
        return Err(ClassifierError::TooFewClasses(corpora.len()));
    }
    for (i, (name, texts)) in corpora.iter().enumerate() {
        if texts.is_empty() {
            return Err(ClassifierError::EmptyCorpus(name.clone()));
        }
        if corpora[..i].iter().any(|(n, _)| n == name) {
            return Err(ClassifierError::DuplicateClass(name.clone()));
        }
    }
    let bits = spec.feature_bits.clamp(4, 24);
    let mut model = TextClassifier {
        classes: corpora.iter().map(|(n, _)| n.clone()).collect(),
        feature_bits: bits,
        weights: vec![0.0; corpora.len() << bits],
        bias: vec![0.0; corpora.len()],
    };
    let dim = model.dim();
    let data: Vec<(usize, Vec<(usize, f64)>)> = corpora
        .iter()
        .enumerate()
        .flat_map(|(c, (_, texts))| texts.iter().map(move |t| (c, featurize(t, bits))))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let lr = spec.learning_rate / (1.0 + f64::from(epoch));
        for &i in &order {
            let (gold, feats) = &data[i];
            let probs = model.probs(feats);
            for (c, p) in probs.iter().enumerate() {
                let g = if c == *gold { 1.0 - p } else { -p };
                model.bias[c] += lr * g;
                for (j, v) in feats {
                    model.weights[c * dim + j] += lr * g * v;
                }
            }
        }
    }
    Ok(model)
}

/// Binary classifier telling texts of style `a` from style `b`.
pub fn train_style_classifier(
    label_a: &str,
    texts_a: &[String],
    label_b: &str,
    texts_b: &[String],
    spec: &ClassifierSpec,
) -> Result<TextClassifier, ClassifierError> {
    train_text_classifier(&[(label_a.to_string(), texts_a.to_vec()), (label_b.to_string(), texts_b.to_vec())], spec)
}
