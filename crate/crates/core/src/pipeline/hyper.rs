use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::Method;
use crate::corpus::Task;

/// Which training recipe a hyperparameter entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Technique {
    Sft,
    Dpo,
    Kto,
    /// DPO on `k'` posts per class drawn from the pool.
    DpoK(usize),
    /// DPO on `k' * |S| * (|S| - 1)` pairs drawn from the pool.
    DpoN(usize),
}

impl Technique {
    pub fn method(self) -> Method {
        match self {
            Technique::Sft => Method::Sft,
            Technique::Kto => Method::Kto,
            Technique::Dpo | Technique::DpoK(_) | Technique::DpoN(_) => Method::Dpo,
        }
    }

    pub fn for_method(method: Method) -> Technique {
        match method {
            Method::Sft => Technique::Sft,
            Method::Dpo => Technique::Dpo,
            Method::Kto => Technique::Kto,
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Technique::Sft => f.write_str("SFT"),
            Technique::Dpo => f.write_str("DPO"),
            Technique::Kto => f.write_str("KTO"),
            Technique::DpoK(k) => write!(f, "DPO-K{k}"),
            Technique::DpoN(k) => write!(f, "DPO-N{k}"),
        }
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        let sub = |prefix: &str| up.strip_prefix(prefix).and_then(|n| n.parse::<usize>().ok());
        match up.as_str() {
            "SFT" => Ok(Technique::Sft),
            "DPO" => Ok(Technique::Dpo),
            "KTO" => Ok(Technique::Kto),
            _ => sub("DPO-K")
                .map(Technique::DpoK)
                .or_else(|| sub("DPO-N").map(Technique::DpoN))
                .ok_or_else(|| format!("unknown technique {s:?}")),
        }
    }
}

impl Serialize for Technique {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Technique {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub epochs: u32,
    pub learning_rate: f64,
}

const fn hp(epochs: u32, learning_rate: f64) -> Hyperparameters {
    Hyperparameters { epochs, learning_rate }
}

pub const DEFAULT_SFT: Hyperparameters = hp(3, 3e-4);
pub const DEFAULT_DPO: Hyperparameters = hp(3, 5e-5);
pub const DEFAULT_KTO: Hyperparameters = hp(3, 5e-7);

/// `(epochs, lr)` pairs for T5 then Llama; `None` where a family was not run.
type Row = (usize, &'static str, Option<(u32, f64)>, Option<(u32, f64)>);

const HATEXPLAIN: &[Row] = &[
    (16, "DPO", Some((3, 5e-5)), Some((3, 1e-5))),
    (32, "DPO", Some((3, 5e-5)), Some((4, 1e-5))),
    (64, "DPO", Some((3, 1e-5)), Some((3, 1e-5))),
    (128, "DPO", Some((3, 5e-5)), Some((3, 1e-5))),
    (256, "DPO", Some((4, 1e-4)), Some((3, 1e-5))),
    (256, "KTO", None, Some((3, 5e-7))),
    (256, "DPO-K128", Some((3, 1e-5)), Some((4, 1e-4))),
    (256, "DPO-K192", Some((3, 1e-4)), Some((1, 7e-5))),
    (256, "DPO-N128", Some((3, 5e-5)), Some((5, 5e-6))),
    (256, "DPO-N192", Some((3, 5e-5)), Some((5, 5e-6))),
];

const LATENT_HATE: &[Row] = &[
    (16, "DPO", Some((3, 5e-5)), Some((3, 1e-6))),
    (32, "DPO", Some((3, 1e-4)), Some((3, 1e-6))),
    (64, "DPO", Some((3, 5e-5)), Some((3, 1e-6))),
    (128, "DPO", Some((4, 5e-5)), Some((3, 1e-4))),
    (256, "DPO", Some((3, 1e-4)), Some((3, 1e-4))),
    (256, "KTO", None, Some((3, 5e-7))),
    (256, "DPO-K128", Some((4, 1e-4)), Some((4, 1e-4))),
    (256, "DPO-K192", Some((3, 1e-4)), Some((3, 1e-4))),
    (256, "DPO-N128", Some((4, 1e-4)), Some((3, 1e-4))),
    (256, "DPO-N192", Some((4, 1e-4)), Some((5, 1e-4))),
];

const IMPLICIT_HATE: &[Row] = &[
    (16, "DPO", Some((3, 5e-5)), Some((3, 5e-6))),
    (32, "DPO", Some((3, 5e-5)), Some((4, 5e-5))),
    (64, "DPO", Some((3, 1e-4)), Some((3, 1e-6))),
    (128, "DPO", Some((1, 7e-5)), Some((3, 1e-4))),
    (256, "DPO", Some((1, 5e-5)), Some((1, 5e-5))),
    (256, "KTO", None, Some((3, 5e-7))),
    (256, "DPO-K128", Some((1, 7e-5)), Some((1, 1e-5))),
    (256, "DPO-K192", Some((1, 7e-5)), Some((1, 5e-5))),
    (256, "DPO-N128", Some((1, 7e-5)), Some((1, 1e-5))),
    (256, "DPO-N192", Some((1, 7e-5)), Some((1, 5e-5))),
];

/// Normalized model family used in lookups: lowercase alphanumerics.
pub fn family_key(family: &str) -> String {
    family.chars().filter(char::is_ascii_alphanumeric).map(|c| c.to_ascii_lowercase()).collect()
}

/// Static `(task, family, K, technique) -> (epochs, lr)` table with a
/// default per technique, so lookups always succeed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterRegistry {
    entries: BTreeMap<String, Hyperparameters>,
    sft: Hyperparameters,
    dpo: Hyperparameters,
    kto: Hyperparameters,
}

fn key(task: Task, family: &str, k: usize, technique: Technique) -> String {
    format!("{}/{}/{}/{}", task.slug(), family_key(family), k, technique)
}

impl Default for HyperparameterRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl HyperparameterRegistry {
    /// Tuned values for T5 and Llama on the three bundled tasks.
    pub fn builtin() -> Self {
        let mut entries = BTreeMap::new();
        for (task, rows) in [(Task::HateXplain, HATEXPLAIN), (Task::LatentHate, LATENT_HATE), (Task::ImplicitHate, IMPLICIT_HATE)] {
            for &(k, technique, t5, llama) in rows {
                let technique: Technique = technique.parse().expect("table techniques parse");
                for (family, cell) in [("t5", t5), ("llama", llama)] {
                    if let Some((epochs, lr)) = cell {
                        entries.insert(key(task, family, k, technique), hp(epochs, lr));
                    }
                }
            }
        }
        Self {
            entries,
            sft: DEFAULT_SFT,
            dpo: DEFAULT_DPO,
            kto: DEFAULT_KTO,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, task: Task, family: &str, k: usize, technique: Technique, value: Hyperparameters) {
        self.entries.insert(key(task, family, k, technique), value);
    }

    pub fn default_for(&self, technique: Technique) -> Hyperparameters {
        match technique {
            Technique::Sft => self.sft,
            Technique::Kto => self.kto,
            Technique::Dpo | Technique::DpoK(_) | Technique::DpoN(_) => self.dpo,
        }
    }

    /// Exact entry if one exists, otherwise the technique default.
    pub fn lookup(&self, task: Task, family: &str, k: usize, technique: Technique) -> Hyperparameters {
        self.entries
            .get(&key(task, family, k, technique))
            .copied()
            .unwrap_or_else(|| self.default_for(technique))
    }
}

pub fn lookup_hyperparameters(registry: &HyperparameterRegistry, task: Task, family: &str, k: usize, technique: Technique) -> Hyperparameters {
    registry.lookup(task, family, k, technique)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn technique_names_round_trip() {
        for t in [Technique::Sft, Technique::Dpo, Technique::Kto, Technique::DpoK(128), Technique::DpoN(192)] {
            assert_eq!(t.to_string().parse::<Technique>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<Technique>(&json).unwrap(), t);
        }
        assert_eq!("dpo-k128".parse::<Technique>().unwrap(), Technique::DpoK(128));
        assert!("DPO-Kx".parse::<Technique>().is_err());
    }

    #[test]
    fn table_lookups_and_defaults() {
        let r = HyperparameterRegistry::builtin();
        assert_eq!(r.len(), 3 * (5 * 2 + 1 + 4 * 2));
        assert_eq!(r.lookup(Task::HateXplain, "Llama", 256, Technique::Kto), hp(3, 5e-7));
        assert_eq!(r.lookup(Task::ImplicitHate, "T5", 128, Technique::Dpo), hp(1, 7e-5));
        assert_eq!(r.lookup(Task::HateXplain, "T5", 1000, Technique::Dpo), hp(3, 5e-5));
        assert_eq!(r.lookup(Task::HateXplain, "T5", 256, Technique::Kto), DEFAULT_KTO);
        assert_eq!(r.lookup(Task::LatentHate, "mistral", 16, Technique::Sft), DEFAULT_SFT);
        assert_eq!(r.lookup(Task::LatentHate, "flan-t5", 16, Technique::DpoN(128)), DEFAULT_DPO);
    }

    #[test]
    fn family_names_are_normalized() {
        let r = HyperparameterRegistry::builtin();
        assert_eq!(r.lookup(Task::LatentHate, "LLAMA", 128, Technique::Dpo), hp(3, 1e-4));
        assert_eq!(family_key("Flan-T5"), "flant5");
    }
}
