use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// One annotator's preference for one sample: `choice` names a source model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub sample_id: String,
    pub annotator_id: String,
    pub choice: String,
}

/// Majority-vote winners, grouped by each sample's gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub sources: Vec<String>,
    /// Gold label -> source -> samples won.
    pub rows: IndexMap<String, IndexMap<String, usize>>,
    pub row_totals: IndexMap<String, usize>,
    /// Winner per voted sample; `None` for a tie.
    pub winners: BTreeMap<String, Option<String>>,
    pub tie_count: usize,
    pub voted_samples: usize,
}

impl VoteTally {
    /// `label,<source>...,total`, one row per gold label, then a `ties` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend(self.sources.iter().cloned());
        header.push("total".into());
        w.write_record(&header)?;
        for (label, counts) in &self.rows {
            let mut rec = vec![label.clone()];
            rec.extend(self.sources.iter().map(|s| counts[s].to_string()));
            rec.push(self.row_totals[label].to_string());
            w.write_record(&rec)?;
        }
        let mut ties = vec!["ties".to_string()];
        ties.extend(self.sources.iter().map(|_| String::new()));
        ties.push(self.tie_count.to_string());
        w.write_record(&ties)?;
        let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Per-sample strict majority over `votes`. A sample whose top choice does
/// not hold more than half of its votes is a tie: it is left out of the label
/// rows and counted in `tie_count`. Samples without votes are ignored.
///
/// `samples` maps sample id to gold label; rows follow its order.
pub fn aggregate_votes(samples: &IndexMap<String, String>, sources: &[String], votes: &[Vote]) -> Result<VoteTally> {
    let mut per_sample: HashMap<&str, HashMap<&str, usize>> = HashMap::new();
    for v in votes {
        if !samples.contains_key(&v.sample_id) {
            return Err(EvalError::UnknownSample(v.sample_id.clone()));
        }
        if !sources.contains(&v.choice) {
            return Err(EvalError::UnknownChoice {
                sample_id: v.sample_id.clone(),
                choice: v.choice.clone(),
            });
        }
        *per_sample.entry(&v.sample_id).or_default().entry(&v.choice).or_default() += 1;
    }

    let mut rows: IndexMap<String, IndexMap<String, usize>> = IndexMap::new();
    for gold in samples.values() {
        rows.entry(gold.clone())
            .or_insert_with(|| sources.iter().map(|s| (s.clone(), 0)).collect());
    }
    let mut winners = BTreeMap::new();
    let mut tie_count = 0;
    for (id, gold) in samples {
        let Some(counts) = per_sample.get(id.as_str()) else {
            continue;
        };
        let total: usize = counts.values().sum();
        let winner = sources
            .iter()
            .find(|s| counts.get(s.as_str()).copied().unwrap_or(0) * 2 > total)
            .cloned();
        match &winner {
            Some(w) => *rows[gold].get_mut(w).expect("source row exists") += 1,
            None => tie_count += 1,
        }
        winners.insert(id.clone(), winner);
    }
    let row_totals = rows.iter().map(|(l, c)| (l.clone(), c.values().sum())).collect();
    Ok(VoteTally {
        sources: sources.to_vec(),
        rows,
        row_totals,
        voted_samples: winners.len(),
        winners,
        tie_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(s: &str, a: &str, c: &str) -> Vote {
        Vote {
            sample_id: s.into(),
            annotator_id: a.into(),
            choice: c.into(),
        }
    }

    fn srcs() -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    #[test]
    fn majority_and_ties() {
        let samples: IndexMap<String, String> = [("s1", "x"), ("s2", "x"), ("s3", "y")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let votes = vec![
            vote("s1", "u1", "A"),
            vote("s1", "u2", "A"),
            vote("s1", "u3", "B"),
            vote("s2", "u1", "A"),
            vote("s2", "u2", "B"),
        ];
        let t = aggregate_votes(&samples, &srcs(), &votes).unwrap();
        assert_eq!(t.winners["s1"].as_deref(), Some("A"));
        assert_eq!(t.winners["s2"], None);
        assert_eq!(t.tie_count, 1);
        assert_eq!(t.voted_samples, 2);
        assert_eq!(t.rows["x"]["A"], 1);
        assert_eq!(t.row_totals["y"], 0);
        let csv = t.to_csv().unwrap();
        assert_eq!(csv, "label,A,B,total\nx,1,0,1\ny,0,0,0\nties,,,1\n");
    }

    #[test]
    fn unknown_references() {
        let samples: IndexMap<String, String> = [("s1".to_string(), "x".to_string())].into_iter().collect();
        assert!(matches!(aggregate_votes(&samples, &srcs(), &[vote("zz", "u", "A")]), Err(EvalError::UnknownSample(_))));
        assert!(matches!(aggregate_votes(&samples, &srcs(), &[vote("s1", "u", "C")]), Err(EvalError::UnknownChoice { .. })));
    }
}
