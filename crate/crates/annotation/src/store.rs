//! Annotation state kept as an append-only event log plus periodic snapshots.
//!
//! Every mutation is written to `events.jsonl` before it is applied in memory,
//! under one lock, so the order of the log is the order of the service. On
//! start the latest `snapshot.json` is loaded and the log lines after it are
//! replayed.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{AnnotationError, Result};
use crate::model::{
    order_flip, resolve_choice, AnnotationItem, AnnotatorProfile, Assignment, Batch, Choice, Demographics, PairSource, StoredVote,
};

const LOG_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    AnnotatorRegistered(AnnotatorProfile),
    BatchCreated(Batch),
    VoteRecorded(StoredVote),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct State {
    annotators: Vec<AnnotatorProfile>,
    batches: Vec<Batch>,
    votes: Vec<StoredVote>,
    /// Log lines already reflected in this state.
    applied: usize,
}

impl State {
    fn apply(&mut self, event: Event) {
        match event {
            Event::AnnotatorRegistered(p) => self.annotators.push(p),
            Event::BatchCreated(b) => self.batches.push(b),
            Event::VoteRecorded(v) => self.votes.push(v),
        }
        self.applied += 1;
    }

    fn annotator(&self, id: &str) -> Result<&AnnotatorProfile> {
        self.annotators.iter().find(|a| a.annotator_id == id).ok_or_else(|| AnnotationError::UnknownAnnotator(id.to_string()))
    }

    fn batch(&self, id: &str) -> Result<&Batch> {
        self.batches.iter().find(|b| b.batch_id == id).ok_or_else(|| AnnotationError::UnknownBatch(id.to_string()))
    }

    fn has_vote(&self, batch_id: &str, sample_id: &str, annotator_id: &str) -> bool {
        self.votes.iter().any(|v| v.batch_id == batch_id && v.sample_id == sample_id && v.annotator_id == annotator_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: usize,
    pub total: usize,
}

/// Result of asking for work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextItem {
    Item(AnnotationItem, Progress),
    Done(Progress),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Serialize)]
struct ExportRow<'a> {
    sample_id: &'a str,
    annotator_id: &'a str,
    resolved_model: &'a str,
    timestamp: String,
}

pub struct Store {
    state: Mutex<State>,
    dir: Option<PathBuf>,
    seed: String,
    clock: Arc<dyn Clock>,
    snapshot_every: usize,
}

impl Store {
    /// Store without persistence.
    pub fn in_memory(seed: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Self {
            state: Mutex::new(State::default()),
            dir: None,
            seed: seed.into(),
            clock,
            snapshot_every: 0,
        }
    }

    /// Open or create a store in `dir`, replaying whatever it already holds.
    pub fn open(dir: impl Into<PathBuf>, seed: impl Into<String>, clock: Arc<dyn Clock>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut state: State = match fs::read_to_string(dir.join(SNAPSHOT_FILE)) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => State::default(),
            Err(e) => return Err(e.into()),
        };
        let log = dir.join(LOG_FILE);
        if log.exists() {
            for (i, line) in BufReader::new(File::open(&log)?).lines().enumerate() {
                let line = line?;
                if i < state.applied || line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(&line).map_err(|e| AnnotationError::CorruptLog {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                state.apply(event);
            }
        }
        tracing::info!(dir = %dir.display(), events = state.applied, "annotation store opened");
        Ok(Self {
            state: Mutex::new(state),
            dir: Some(dir),
            seed: seed.into(),
            clock,
            snapshot_every: 256,
        })
    }

    pub fn with_snapshot_every(mut self, n: usize) -> Self {
        self.snapshot_every = n;
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("annotation state poisoned")
    }

    /// Log then apply. Caller holds the lock, so appends are serialized.
    fn commit(&self, state: &mut State, event: Event) -> Result<()> {
        if let Some(dir) = &self.dir {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?;
            let mut line = serde_json::to_string(&event)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        state.apply(event);
        if self.snapshot_every > 0 && state.applied.is_multiple_of(self.snapshot_every) {
            self.write_snapshot(state)?;
        }
        Ok(())
    }

    fn write_snapshot(&self, state: &State) -> Result<()> {
        if let Some(dir) = &self.dir {
            let tmp = dir.join("snapshot.json.tmp");
            fs::write(&tmp, serde_json::to_string(state)?)?;
            fs::rename(tmp, dir.join(SNAPSHOT_FILE))?;
        }
        Ok(())
    }

    /// Write a snapshot now.
    pub fn snapshot(&self) -> Result<()> {
        self.write_snapshot(&self.lock())
    }

    pub fn register_annotator(&self, annotator_id: Option<String>, demographics: Option<Demographics>) -> Result<AnnotatorProfile> {
        let mut state = self.lock();
        let annotator_id = match annotator_id {
            Some(id) if state.annotators.iter().any(|a| a.annotator_id == id) => return Err(AnnotationError::DuplicateAnnotator(id)),
            Some(id) if id.trim().is_empty() => return Err(AnnotationError::Config("empty annotator id".into())),
            Some(id) => id,
            None => {
                let mut n = state.annotators.len() + 1;
                while state.annotators.iter().any(|a| a.annotator_id == format!("ann-{n:04}")) {
                    n += 1;
                }
                format!("ann-{n:04}")
            }
        };
        let profile = AnnotatorProfile {
            annotator_id,
            demographics,
            registered_at: self.clock.now(),
        };
        self.commit(&mut state, Event::AnnotatorRegistered(profile.clone()))?;
        Ok(profile)
    }

    pub fn annotators(&self) -> Vec<AnnotatorProfile> {
        self.lock().annotators.clone()
    }

    /// Schedule every item for `assignments_per_item` distinct annotators,
    /// drawn uniformly at random from those registered now.
    pub fn create_batch(&self, model_a: &str, model_b: &str, items: Vec<PairSource>, assignments_per_item: usize) -> Result<Batch> {
        if items.is_empty() {
            return Err(AnnotationError::EmptyBatch);
        }
        if assignments_per_item == 0 {
            return Err(AnnotationError::ZeroAssignments);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = items.iter().find(|i| !seen.insert(i.sample_id.as_str())) {
            return Err(AnnotationError::DuplicateSample(dup.sample_id.clone()));
        }
        let mut state = self.lock();
        let registered = state.annotators.len();
        if registered < assignments_per_item {
            return Err(AnnotationError::NotEnoughAnnotators {
                requested: assignments_per_item,
                registered,
            });
        }
        let batch_id = format!("batch-{:04}", state.batches.len() + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(modkit_core::digest::derive_seed(0, &format!("{}/{batch_id}", self.seed)));
        let mut assignments = Vec::with_capacity(items.len() * assignments_per_item);
        for item in &items {
            let mut picked = rand::seq::index::sample(&mut rng, registered, assignments_per_item).into_vec();
            picked.sort_unstable();
            assignments.extend(picked.into_iter().map(|i| Assignment {
                sample_id: item.sample_id.clone(),
                annotator_id: state.annotators[i].annotator_id.clone(),
            }));
        }
        let batch = Batch {
            batch_id,
            model_a: model_a.to_string(),
            model_b: model_b.to_string(),
            assignments_per_item,
            items,
            assignments,
            created_at: self.clock.now(),
        };
        self.commit(&mut state, Event::BatchCreated(batch.clone()))?;
        Ok(batch)
    }

    pub fn batch(&self, batch_id: &str) -> Result<Batch> {
        self.lock().batch(batch_id).cloned()
    }

    /// First unanswered assignment of the annotator, in batch then item order.
    pub fn serve_next(&self, annotator_id: &str) -> Result<NextItem> {
        let state = self.lock();
        state.annotator(annotator_id)?;
        let mut progress = Progress { answered: 0, total: 0 };
        let mut next = None;
        for batch in &state.batches {
            for a in batch.assignments.iter().filter(|a| a.annotator_id == annotator_id) {
                progress.total += 1;
                if state.has_vote(&batch.batch_id, &a.sample_id, annotator_id) {
                    progress.answered += 1;
                } else if next.is_none() {
                    let source = batch.item(&a.sample_id).expect("assignment refers to a batch item");
                    let flip = order_flip(&self.seed, &a.sample_id, annotator_id);
                    next = Some(AnnotationItem::new(&batch.batch_id, source, flip));
                }
            }
        }
        Ok(match next {
            Some(item) => NextItem::Item(item, progress),
            None => NextItem::Done(progress),
        })
    }

    /// Record a choice. Without `batch_id` the annotator's first batch that
    /// assigns `sample_id` to them is used.
    pub fn submit_vote(&self, annotator_id: &str, batch_id: Option<&str>, sample_id: &str, choice: Choice) -> Result<StoredVote> {
        let mut state = self.lock();
        state.annotator(annotator_id)?;
        let batch = match batch_id {
            Some(id) => state.batch(id)?,
            None => state.batches.iter().find(|b| b.is_assigned(sample_id, annotator_id)).ok_or_else(|| AnnotationError::NotAssigned {
                sample_id: sample_id.to_string(),
                annotator_id: annotator_id.to_string(),
            })?,
        };
        if !batch.is_assigned(sample_id, annotator_id) {
            return Err(AnnotationError::NotAssigned {
                sample_id: sample_id.to_string(),
                annotator_id: annotator_id.to_string(),
            });
        }
        if state.has_vote(&batch.batch_id, sample_id, annotator_id) {
            return Err(AnnotationError::DuplicateVote {
                sample_id: sample_id.to_string(),
                annotator_id: annotator_id.to_string(),
            });
        }
        let flip = order_flip(&self.seed, sample_id, annotator_id);
        let vote = StoredVote {
            batch_id: batch.batch_id.clone(),
            sample_id: sample_id.to_string(),
            annotator_id: annotator_id.to_string(),
            choice,
            resolved_model: resolve_choice(choice, flip, &batch.model_a, &batch.model_b),
            timestamp: self.clock.now(),
            seq: state.votes.len() as u64,
        };
        self.commit(&mut state, Event::VoteRecorded(vote.clone()))?;
        Ok(vote)
    }

    /// Votes of one batch ordered by (sample_id, timestamp, arrival).
    pub fn votes(&self, batch_id: &str) -> Result<Vec<StoredVote>> {
        let state = self.lock();
        state.batch(batch_id)?;
        let mut votes: Vec<StoredVote> = state.votes.iter().filter(|v| v.batch_id == batch_id).cloned().collect();
        votes.sort_by(|a, b| (&a.sample_id, a.timestamp, a.seq).cmp(&(&b.sample_id, b.timestamp, b.seq)));
        Ok(votes)
    }

    pub fn export(&self, batch_id: &str, format: ExportFormat) -> Result<String> {
        let votes = self.votes(batch_id)?;
        let rows = votes.iter().map(|v| ExportRow {
            sample_id: &v.sample_id,
            annotator_id: &v.annotator_id,
            resolved_model: &v.resolved_model,
            timestamp: format_timestamp(v.timestamp),
        });
        match format {
            ExportFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                // Header even when there are no rows.
                w.write_record(["sample_id", "annotator_id", "resolved_model", "timestamp"])?;
                for row in rows {
                    w.write_record([row.sample_id, row.annotator_id, row.resolved_model, &row.timestamp])?;
                }
                let bytes = w.into_inner().map_err(|e| AnnotationError::Io(e.into_error()))?;
                Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
            }
            ExportFormat::Jsonl => {
                let mut out = String::new();
                for row in rows {
                    out.push_str(&serde_json::to_string(&row)?);
                    out.push('\n');
                }
                Ok(out)
            }
        }
    }
}

fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::StepClock;

    fn items(n: usize) -> Vec<PairSource> {
        (0..n)
            .map(|i| PairSource {
                sample_id: format!("p{i:03}"),
                text: format!("post {i}"),
                gold_label: "Hate".into(),
                explanation_a: format!("a{i}"),
                explanation_b: format!("b{i}"),
            })
            .collect()
    }

    fn store_with(annotators: usize) -> Store {
        let s = Store::in_memory("seed", Arc::new(StepClock::default()));
        for _ in 0..annotators {
            s.register_annotator(None, None).unwrap();
        }
        s
    }

    #[test]
    fn schedules_distinct_annotators_per_item() {
        let s = store_with(14);
        let b = s.create_batch("T5", "Llama", items(342), 3).unwrap();
        assert_eq!(b.assignments.len(), 1026);
        let pairs: HashSet<(&str, &str)> = b.assignments.iter().map(|a| (a.sample_id.as_str(), a.annotator_id.as_str())).collect();
        assert_eq!(pairs.len(), 1026);
        for item in &b.items {
            assert_eq!(b.assignments.iter().filter(|a| a.sample_id == item.sample_id).count(), 3);
        }
        // Roughly uniform load: 1026 / 14 is about 73 each.
        for a in s.annotators() {
            let load = b.assignments.iter().filter(|x| x.annotator_id == a.annotator_id).count();
            assert!((40..=110).contains(&load), "{load}");
        }
    }

    #[test]
    fn single_item_single_assignment() {
        let s = store_with(1);
        assert_eq!(s.create_batch("A", "B", items(1), 1).unwrap().assignments.len(), 1);
    }

    #[test]
    fn batch_errors() {
        let s = store_with(2);
        assert!(matches!(s.create_batch("A", "B", vec![], 1), Err(AnnotationError::EmptyBatch)));
        assert!(matches!(s.create_batch("A", "B", items(2), 0), Err(AnnotationError::ZeroAssignments)));
        assert!(matches!(
            s.create_batch("A", "B", items(2), 3),
            Err(AnnotationError::NotEnoughAnnotators { requested: 3, registered: 2 })
        ));
        let mut dup = items(2);
        dup[1].sample_id = dup[0].sample_id.clone();
        assert!(matches!(s.create_batch("A", "B", dup, 1), Err(AnnotationError::DuplicateSample(_))));
    }

    #[test]
    fn serves_until_done() {
        let s = store_with(1);
        s.create_batch("A", "B", items(2), 1).unwrap();
        for answered in 0..2 {
            let NextItem::Item(item, progress) = s.serve_next("ann-0001").unwrap() else {
                panic!("expected an item");
            };
            assert_eq!(progress, Progress { answered, total: 2 });
            // Serving again before voting yields the same pair in the same order.
            assert_eq!(s.serve_next("ann-0001").unwrap(), NextItem::Item(item.clone(), progress));
            s.submit_vote("ann-0001", None, &item.sample_id, Choice::First).unwrap();
        }
        assert_eq!(s.serve_next("ann-0001").unwrap(), NextItem::Done(Progress { answered: 2, total: 2 }));
        assert!(matches!(s.serve_next("nobody"), Err(AnnotationError::UnknownAnnotator(_))));
    }

    #[test]
    fn vote_rules() {
        let s = store_with(2);
        let b = s.create_batch("A", "B", items(4), 1).unwrap();
        let mine = &b.assignments[0];
        let other = b.assignments.iter().find(|a| a.annotator_id != mine.annotator_id).map(|a| a.annotator_id.clone());
        s.submit_vote(&mine.annotator_id, Some(&b.batch_id), &mine.sample_id, Choice::Second).unwrap();
        assert!(matches!(
            s.submit_vote(&mine.annotator_id, Some(&b.batch_id), &mine.sample_id, Choice::First),
            Err(AnnotationError::DuplicateVote { .. })
        ));
        if let Some(other) = other {
            assert!(matches!(
                s.submit_vote(&other, Some(&b.batch_id), &mine.sample_id, Choice::First),
                Err(AnnotationError::NotAssigned { .. })
            ));
        }
        assert!(matches!(s.submit_vote(&mine.annotator_id, Some("batch-9"), "p000", Choice::First), Err(AnnotationError::UnknownBatch(_))));
        assert!(matches!(s.export("batch-9", ExportFormat::Csv), Err(AnnotationError::UnknownBatch(_))));
    }

    #[test]
    fn duplicate_annotator_ids_are_rejected() {
        let s = store_with(0);
        s.register_annotator(Some("w1".into()), None).unwrap();
        assert!(matches!(s.register_annotator(Some("w1".into()), None), Err(AnnotationError::DuplicateAnnotator(_))));
        assert_eq!(s.register_annotator(None, None).unwrap().annotator_id, "ann-0002");
    }

    #[test]
    fn replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(StepClock::default());
        let export = {
            let s = Store::open(dir.path(), "seed", clock.clone()).unwrap().with_snapshot_every(4);
            for _ in 0..3 {
                s.register_annotator(None, None).unwrap();
            }
            let b = s.create_batch("A", "B", items(5), 2).unwrap();
            for a in b.assignments.iter().take(7) {
                s.submit_vote(&a.annotator_id, None, &a.sample_id, Choice::First).unwrap();
            }
            assert!(dir.path().join(SNAPSHOT_FILE).exists());
            s.export(&b.batch_id, ExportFormat::Jsonl).unwrap()
        };
        let reopened = Store::open(dir.path(), "seed", clock.clone()).unwrap();
        assert_eq!(reopened.export("batch-0001", ExportFormat::Jsonl).unwrap(), export);
        assert_eq!(reopened.annotators().len(), 3);
        // Without the snapshot the log alone rebuilds the same state.
        fs::remove_file(dir.path().join(SNAPSHOT_FILE)).unwrap();
        let from_log = Store::open(dir.path(), "seed", clock).unwrap();
        assert_eq!(from_log.export("batch-0001", ExportFormat::Jsonl).unwrap(), export);
    }

    #[test]
    fn corrupt_log_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOG_FILE), "{\"event\":\"vote_recorded\"}\n").unwrap();
        match Store::open(dir.path(), "seed", Arc::new(StepClock::default())) {
            Err(AnnotationError::CorruptLog { line, .. }) => assert_eq!(line, 1),
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => panic!("expected an error"),
        }
    }
}
