use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabelSpace, LabeledExample, Post};
use crate::digest::derive_seed;

const FILLER: [&str; 20] = [
    "people", "today", "online", "group", "news", "city", "always", "never", "really", "think", "said", "story", "work",
    "friends", "again", "school", "world", "post", "comment", "thread",
];

/// Deterministic labeled posts with seed explanations, `per_class` per label.
///
/// Each post mixes random filler words with a marker word tied to its class,
/// so the classes are learnable by simple text classifiers. Ids are
/// `syn-<class index>-<n>`.
pub fn synthetic_examples(space: &LabelSpace, per_class: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synthetic"));
    let mut out = Vec::with_capacity(per_class * space.len());
    for (ci, label) in space.labels().iter().enumerate() {
        let marker = format!("marker{ci}");
        for n in 0..per_class {
            let mut words: Vec<&str> = (0..rng.gen_range(6..14)).map(|_| *FILLER.choose(&mut rng).expect("non-empty")).collect();
            let at = rng.gen_range(0..=words.len());
            words.insert(at, &marker);
            out.push(LabeledExample {
                post: Post {
                    id: format!("syn-{ci}-{n:05}"),
                    text: words.join(" "),
                    platform: None,
                },
                gold_label: label.clone(),
                seed_explanation: Some(format!("The post uses {marker}, which fits the definition of {label}.")),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;

    #[test]
    fn sizes_and_determinism() {
        let space = Task::LatentHate.label_space();
        let a = synthetic_examples(&space, 5, 1);
        assert_eq!(a.len(), 15);
        assert_eq!(a, synthetic_examples(&space, 5, 1));
        assert_ne!(a, synthetic_examples(&space, 5, 2));
        assert!(a.iter().all(|e| e.seed_explanation.is_some()));
    }
}
