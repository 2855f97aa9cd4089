use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, LabeledExample, Result};
use crate::digest::derive_seed;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        let ok = parts.iter().all(|r| r.is_finite() && *r >= 0.0) && (parts.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::BadRatios {
                train: self.train,
                val: self.val,
                test: self.test,
            })
        }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn part(&self, tag: SplitTag) -> &[LabeledExample] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5 + EPS).floor() as i64
}

fn floor_eps(x: f64) -> i64 {
    (x + EPS).floor() as i64
}

/// Stratified, seeded train/val/test split.
///
/// Per-class split sizes are each the floor or ceiling of `n_class * ratio`,
/// while the global train size is `round(N * train)` and the global validation
/// and test sizes stay within one example of their ideal. The per-class
/// rounding directions are chosen by a small max-flow so both constraints hold
/// at once. Class members are ordered by id before shuffling, so the result
/// depends only on the set of examples and the seed.
pub fn split_dataset(examples: &[LabeledExample], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut classes: BTreeMap<&str, Vec<&LabeledExample>> = BTreeMap::new();
    for ex in examples {
        classes.entry(ex.gold_label.as_str()).or_default().push(ex);
    }
    let sizes: Vec<usize> = classes.values().map(Vec::len).collect();
    let counts = apportion(&sizes, ratios.as_array());

    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        ratios,
        seed,
    };
    for ((label, mut members), [n_train, n_val, _]) in classes.into_iter().zip(counts) {
        members.sort_by(|a, b| a.id().cmp(b.id()));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("split/{label}")));
        members.shuffle(&mut rng);
        for (i, ex) in members.into_iter().enumerate() {
            let dest = if i < n_train {
                &mut split.train
            } else if i < n_train + n_val {
                &mut split.val
            } else {
                &mut split.test
            };
            dest.push(ex.clone());
        }
    }
    Ok(split)
}

/// Integer per-class split sizes (rows = classes, columns = train/val/test).
pub(crate) fn apportion(class_sizes: &[usize], ratios: [f64; 3]) -> Vec<[usize; 3]> {
    let total: usize = class_sizes.iter().sum();
    let mut floors = Vec::with_capacity(class_sizes.len());
    let mut fracs = Vec::with_capacity(class_sizes.len());
    let mut row_residual = Vec::with_capacity(class_sizes.len());
    for &n in class_sizes {
        let mut f = [0i64; 3];
        let mut fr = [0f64; 3];
        for j in 0..3 {
            let ideal = n as f64 * ratios[j];
            f[j] = floor_eps(ideal);
            fr[j] = (ideal - f[j] as f64).max(0.0);
        }
        row_residual.push(n as i64 - f.iter().sum::<i64>());
        floors.push(f);
        fracs.push(fr);
    }

    let col_floor = |j: usize| floors.iter().map(|f| f[j]).sum::<i64>();
    let col_frac = |j: usize| fracs.iter().map(|f| f[j]).sum::<f64>();
    let residual_total: i64 = row_residual.iter().sum();

    let q_train = round_half_up(total as f64 * ratios[0]) - col_floor(0);
    let val_ideal = col_frac(1);
    let test_ideal = col_frac(2);
    let mut q_val = round_half_up(total as f64 * ratios[1]) - col_floor(1);
    // q must be the floor or ceiling of its fractional column total.
    let in_range = |q: i64, ideal: f64| q >= floor_eps(ideal) && q <= (ideal - EPS).ceil().max(floor_eps(ideal) as f64) as i64;
    if !in_range(residual_total - q_train - q_val, test_ideal) {
        let alt = if q_val as f64 > val_ideal { q_val - 1 } else { q_val + 1 };
        if in_range(alt, val_ideal) && in_range(residual_total - q_train - alt, test_ideal) {
            q_val = alt;
        }
    }
    let q_test = residual_total - q_train - q_val;

    let demand = [q_train.max(0) as usize, q_val.max(0) as usize, q_test.max(0) as usize];
    let rows: Vec<usize> = row_residual.iter().map(|r| *r as usize).collect();
    let bumps = match assign_residuals(&rows, demand, |c, j| fracs[c][j] > EPS) {
        Some(b) => b,
        None => assign_residuals(&rows, demand, |_, _| true).unwrap_or_else(|| greedy_bumps(&rows, &fracs)),
    };

    floors
        .iter()
        .zip(bumps)
        .map(|(f, b)| [0, 1, 2].map(|j| (f[j] as usize) + b[j] as usize))
        .collect()
}

fn greedy_bumps(rows: &[usize], fracs: &[[f64; 3]]) -> Vec<[u8; 3]> {
    rows.iter()
        .zip(fracs)
        .map(|(&r, fr)| {
            let mut order = [0usize, 1, 2];
            order.sort_by(|a, b| fr[*b].total_cmp(&fr[*a]));
            let mut out = [0u8; 3];
            for &j in order.iter().take(r) {
                out[j] = 1;
            }
            out
        })
        .collect()
}

/// 0/1 matrix with the given row sums and column sums, using only allowed
/// cells. Augmenting-path max-flow on the bipartite graph.
fn assign_residuals(rows: &[usize], cols: [usize; 3], allowed: impl Fn(usize, usize) -> bool) -> Option<Vec<[u8; 3]>> {
    if rows.iter().sum::<usize>() != cols.iter().sum::<usize>() {
        return None;
    }
    let mut cell = vec![[0u8; 3]; rows.len()];
    let mut col_left = cols;

    // Each augmentation walks row -> col (unused allowed cell) or col -> row
    // (cancel a used cell) and ends at a column with spare demand.
    fn augment(
        r: usize,
        cell: &mut [[u8; 3]],
        col_left: &mut [usize; 3],
        allowed: &dyn Fn(usize, usize) -> bool,
        seen_col: &mut [bool; 3],
    ) -> bool {
        for j in 0..3 {
            if seen_col[j] || cell[r][j] == 1 || !allowed(r, j) {
                continue;
            }
            seen_col[j] = true;
            if col_left[j] > 0 {
                col_left[j] -= 1;
                cell[r][j] = 1;
                return true;
            }
            for r2 in 0..cell.len() {
                if r2 != r && cell[r2][j] == 1 {
                    cell[r2][j] = 0;
                    if augment(r2, cell, col_left, allowed, seen_col) {
                        cell[r][j] = 1;
                        return true;
                    }
                    cell[r2][j] = 1;
                }
            }
        }
        false
    }

    for (r, &need) in rows.iter().enumerate() {
        for _ in 0..need {
            let mut seen = [false; 3];
            if !augment(r, &mut cell, &mut col_left, &allowed, &mut seen) {
                return None;
            }
        }
    }
    Some(cell)
}
