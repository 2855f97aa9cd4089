use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{anonymize, CorpusError, LabelSpace, LabeledExample, Post, Result};

/// One line of a dataset file.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetLine {
    id: String,
    text: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    platform: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ExplanationLine {
    id: String,
    explanation: String,
}

/// Load a JSON-lines dataset, anonymizing every post and validating labels.
///
/// Labels match the label space case-insensitively and are stored in their
/// canonical spelling. Blank lines are skipped; line numbers are 1-based.
pub fn load_dataset(path: impl AsRef<Path>, space: &LabelSpace) -> Result<Vec<LabeledExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetLine = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if record.id.trim().is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        let label = space
            .resolve(&record.label)
            .ok_or_else(|| CorpusError::UnknownLabel {
                label: record.label.clone(),
                line: line_no,
            })?
            .to_string();
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: record.id,
                line: line_no,
            });
        }
        out.push(LabeledExample {
            post: Post {
                id: record.id,
                text: anonymize(&record.text),
                platform: record.platform,
            },
            gold_label: label,
            seed_explanation: record.explanation.filter(|e| !e.trim().is_empty()),
        });
    }
    Ok(out)
}

/// Attach seed explanations keyed by post id. Returns how many examples were
/// updated; ids not present in `examples` are ignored.
pub fn merge_explanations(examples: &mut [LabeledExample], path: impl AsRef<Path>) -> Result<usize> {
    let reader = BufReader::new(File::open(path)?);
    let mut by_id = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExplanationLine = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        by_id.insert(rec.id, rec.explanation);
    }
    let mut merged = 0;
    for ex in examples.iter_mut() {
        if let Some(expl) = by_id.get(ex.id()) {
            ex.seed_explanation = Some(expl.clone());
            merged += 1;
        }
    }
    Ok(merged)
}

/// Write examples in the same line format [`load_dataset`] reads.
pub fn write_examples(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        let line = DatasetLine {
            id: ex.post.id.clone(),
            text: ex.post.text.clone(),
            label: ex.gold_label.clone(),
            explanation: ex.seed_explanation.clone(),
            platform: ex.post.platform.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Alias of [`load_dataset`] for files produced by [`write_examples`].
pub fn read_examples(path: impl AsRef<Path>, space: &LabelSpace) -> Result<Vec<LabeledExample>> {
    load_dataset(path, space)
}
