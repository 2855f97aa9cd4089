//! JSON-lines training files.
//!
//! | method | keys (in order)                  |
//! |--------|----------------------------------|
//! | SFT    | `prompt`, `completion`           |
//! | DPO    | `prompt`, `chosen`, `rejected`   |
//! | KTO    | `prompt`, `completion`, `label`  |
//!
//! Each record is one line terminated by `\n`. Output is byte-stable for a
//! fixed record order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PrefDataError;
use crate::backend::Method;
use crate::digest::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftLine {
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoLine {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KtoLine {
    pub prompt: String,
    pub completion: String,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainingRecord {
    Sft(SftLine),
    Dpo(DpoLine),
    Kto(KtoLine),
}

impl TrainingRecord {
    pub fn method(&self) -> Method {
        match self {
            TrainingRecord::Sft(_) => Method::Sft,
            TrainingRecord::Dpo(_) => Method::Dpo,
            TrainingRecord::Kto(_) => Method::Kto,
        }
    }
}

/// Serialized training data tagged with the method it feeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingFile {
    pub method: Method,
    pub content: String,
}

impl TrainingFile {
    pub fn digest(&self) -> String {
        sha256_hex(self.content.as_bytes())
    }

    pub fn len(&self) -> usize {
        self.content.lines().filter(|l| !l.trim().is_empty()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.content.as_bytes())
    }

    /// Read a file and check every line against `method`.
    pub fn read(path: impl AsRef<Path>, method: Method) -> Result<Self, PrefDataError> {
        let file = TrainingFile {
            method,
            content: fs::read_to_string(path)?,
        };
        deserialize(&file)?;
        Ok(file)
    }

    /// Read a file, inferring the method from its first record.
    pub fn read_detect(path: impl AsRef<Path>) -> Result<Self, PrefDataError> {
        let content = fs::read_to_string(path)?;
        let method = detect_method(&content).ok_or_else(|| PrefDataError::Format {
            line: 1,
            reason: "cannot infer training method".into(),
        })?;
        let file = TrainingFile { method, content };
        deserialize(&file)?;
        Ok(file)
    }
}

/// Serialize homogeneous records for `method`.
pub fn serialize(records: &[TrainingRecord], method: Method) -> Result<TrainingFile, PrefDataError> {
    let mut content = String::new();
    for (i, rec) in records.iter().enumerate() {
        if rec.method() != method {
            return Err(PrefDataError::MixedMethods {
                expected: method,
                found: rec.method(),
                index: i,
            });
        }
        let line = match rec {
            TrainingRecord::Sft(l) => serde_json::to_string(l),
            TrainingRecord::Dpo(l) => serde_json::to_string(l),
            TrainingRecord::Kto(l) => serde_json::to_string(l),
        }
        .expect("string-only records always encode");
        content.push_str(&line);
        content.push('\n');
    }
    Ok(TrainingFile { method, content })
}

pub fn deserialize(file: &TrainingFile) -> Result<Vec<TrainingRecord>, PrefDataError> {
    let mut out = Vec::new();
    for (i, line) in file.content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match file.method {
            Method::Sft => serde_json::from_str(line).map(TrainingRecord::Sft),
            Method::Dpo => serde_json::from_str(line).map(TrainingRecord::Dpo),
            Method::Kto => serde_json::from_str(line).map(TrainingRecord::Kto),
        };
        out.push(parsed.map_err(|e| PrefDataError::Format {
            line: i + 1,
            reason: format!("not a {} record: {e}", file.method),
        })?);
    }
    Ok(out)
}

/// Method whose schema the first non-empty line satisfies.
pub fn detect_method(content: &str) -> Option<Method> {
    let line = content.lines().find(|l| !l.trim().is_empty())?;
    if serde_json::from_str::<DpoLine>(line).is_ok() {
        Some(Method::Dpo)
    } else if serde_json::from_str::<KtoLine>(line).is_ok() {
        Some(Method::Kto)
    } else if serde_json::from_str::<SftLine>(line).is_ok() {
        Some(Method::Sft)
    } else {
        None
    }
}
