//! Labeling rounds backed by an append-only NDJSON event log.
//!
//! Every mutation is appended and fsynced before it is applied in memory,
//! so the in-memory state is always a replay of the durable log.

pub mod service;

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use techradar_core::extractor::{sample_for_labeling, DataPoint, SampleError};
use techradar_core::{FinalLabel, InitialLabel};

pub const EVENTS_FILE: &str = "events.ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Labeled,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTask {
    pub point_id: String,
    pub company_id: String,
    pub keyword: String,
    pub paragraph: String,
    /// Char offset of the keyword within `paragraph`, for highlighting.
    pub char_offset: usize,
    pub page_url: String,
    pub assigned_annotator: String,
    pub status: TaskStatus,
    pub label: Option<InitialLabel>,
    pub round: u32,
    pub keyword_flag: bool,
}

/// One exported annotation. Vectors are attached at training time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedLabel {
    pub point_id: String,
    pub initial_label: InitialLabel,
    pub final_label: FinalLabel,
    pub annotator_id: String,
    pub round: u32,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RoundError {
    #[error("a round needs at least one annotator")]
    NoAnnotators,
    #[error("annotator {0:?} is listed twice")]
    DuplicateAnnotator(String),
    #[error("round size {n} is smaller than the {annotators} annotators")]
    TooSmall { n: usize, annotators: usize },
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Samples `n` points not in `exclude` and deals them round-robin over
/// `annotators` in sample order, so per-annotator counts differ by at most one.
pub fn create_labeling_round(
    points: &[DataPoint],
    n: usize,
    annotators: &[String],
    seed: u64,
    round: u32,
    exclude: &HashSet<String>,
) -> Result<Vec<LabelTask>, RoundError> {
    if annotators.is_empty() {
        return Err(RoundError::NoAnnotators);
    }
    let mut seen = HashSet::new();
    if let Some(dup) = annotators.iter().find(|a| !seen.insert(a.as_str())) {
        return Err(RoundError::DuplicateAnnotator(dup.clone()));
    }
    if n < annotators.len() {
        return Err(RoundError::TooSmall { n, annotators: annotators.len() });
    }
    let sample = sample_for_labeling(points, n, seed, exclude)?;
    Ok(sample
        .into_iter()
        .enumerate()
        .map(|(i, p)| LabelTask {
            point_id: p.point_id,
            company_id: p.company_id,
            keyword: p.keyword,
            paragraph: p.paragraph,
            char_offset: p.char_offset,
            page_url: p.page_url.to_string(),
            assigned_annotator: annotators[i % annotators.len()].clone(),
            status: TaskStatus::Pending,
            label: None,
            round,
            keyword_flag: false,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RoundCreated { round: u32, seed: u64, n: usize, annotators: Vec<String> },
    TaskCreated { task: LabelTask },
    Labeled { point_id: String, label: InitialLabel, flag_keyword: bool, at: DateTime<Utc> },
    Skipped { point_id: String, at: DateTime<Utc> },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("label log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("label log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("task {point_id} is already {status:?}")]
    AlreadyDone { point_id: String, status: TaskStatus },
    #[error(transparent)]
    Round(#[from] RoundError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tasks: u64,
    pub pending: u64,
    pub labeled: u64,
    pub skipped: u64,
}

impl Counts {
    fn add(&mut self, status: TaskStatus) {
        self.tasks += 1;
        match status {
            TaskStatus::Pending => self.pending += 1,
            TaskStatus::Labeled => self.labeled += 1,
            TaskStatus::Skipped => self.skipped += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    /// Latest round number, 0 before any round exists.
    pub round: u32,
    pub total: Counts,
    pub annotators: BTreeMap<String, Counts>,
    /// Labeled tasks per initial label.
    pub labels: BTreeMap<String, u64>,
}

/// A pending task plus its place in the annotator's queue ("k of n").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextTask {
    pub task: Option<LabelTask>,
    pub position: u64,
    pub total: u64,
}

/// The labeling state: tasks in creation order, rebuilt from the event log.
pub struct LabelStore {
    path: PathBuf,
    log: File,
    tasks: Vec<LabelTask>,
    index: BTreeMap<String, usize>,
    annotators: HashSet<String>,
    round: u32,
}

impl LabelStore {
    /// Opens (creating if needed) `dir/events.ndjson` and replays it.
    ///
    /// A final line without a trailing newline is the remains of a write
    /// that was never acknowledged; it is cut off before appending.
    pub fn open(dir: &Path) -> Result<LabelStore, StoreError> {
        let path = dir.join(EVENTS_FILE);
        let io = |source| StoreError::Io { path: path.clone(), source };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut store = LabelStore {
            path: path.clone(),
            log: OpenOptions::new().create(true).append(true).read(true).open(&path).map_err(io)?,
            tasks: Vec::new(),
            index: BTreeMap::new(),
            annotators: HashSet::new(),
            round: 0,
        };
        let mut reader = BufReader::new(File::open(&path).map_err(io)?);
        let mut good_len = 0u64;
        let mut buf = String::new();
        let mut line_no = 0;
        loop {
            buf.clear();
            let read = reader.read_line(&mut buf).map_err(io)?;
            if read == 0 {
                break;
            }
            line_no += 1;
            if !buf.ends_with('\n') {
                tracing::warn!(path = %path.display(), line = line_no, "discarding torn final line of label log");
                break;
            }
            good_len += read as u64;
            if buf.trim().is_empty() {
                continue;
            }
            let event: Event =
                serde_json::from_str(&buf).map_err(|e| StoreError::Corrupt { line: line_no, message: e.to_string() })?;
            store.apply(event).map_err(|e| StoreError::Corrupt { line: line_no, message: e.to_string() })?;
        }
        if store.log.metadata().map_err(io)?.len() != good_len {
            store.log.set_len(good_len).map_err(io)?;
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn apply(&mut self, event: Event) -> Result<(), StoreError> {
        match event {
            Event::RoundCreated { round, annotators, .. } => {
                self.round = self.round.max(round);
                self.annotators.extend(annotators);
            }
            Event::TaskCreated { task } => {
                self.annotators.insert(task.assigned_annotator.clone());
                self.index.insert(task.point_id.clone(), self.tasks.len());
                self.tasks.push(task);
            }
            Event::Labeled { point_id, label, flag_keyword, .. } => {
                let t = self.pending_mut(&point_id)?;
                t.status = TaskStatus::Labeled;
                t.label = Some(label);
                t.keyword_flag = flag_keyword;
            }
            Event::Skipped { point_id, .. } => {
                self.pending_mut(&point_id)?.status = TaskStatus::Skipped;
            }
        }
        Ok(())
    }

    fn pending_mut(&mut self, point_id: &str) -> Result<&mut LabelTask, StoreError> {
        let i = *self.index.get(point_id).ok_or_else(|| StoreError::UnknownTask(point_id.to_string()))?;
        let t = &mut self.tasks[i];
        if t.status != TaskStatus::Pending {
            return Err(StoreError::AlreadyDone { point_id: point_id.to_string(), status: t.status });
        }
        Ok(t)
    }

    /// Appends and fsyncs, then applies. Nothing is applied if the write fails.
    fn commit(&mut self, events: Vec<Event>) -> Result<(), StoreError> {
        let mut bytes = Vec::new();
        for e in &events {
            serde_json::to_writer(&mut bytes, e).expect("events serialize");
            bytes.push(b'\n');
        }
        let io = |source| StoreError::Io { path: self.path.clone(), source };
        self.log.write_all(&bytes).map_err(io)?;
        self.log.sync_data().map_err(io)?;
        for e in events {
            self.apply(e)?;
        }
        Ok(())
    }

    pub fn tasks(&self) -> &[LabelTask] {
        &self.tasks
    }

    pub fn task(&self, point_id: &str) -> Option<&LabelTask> {
        self.index.get(point_id).map(|&i| &self.tasks[i])
    }

    pub fn current_round(&self) -> u32 {
        self.round
    }

    pub fn has_annotator(&self, id: &str) -> bool {
        self.annotators.contains(id)
    }

    /// Starts the next round, excluding every point of earlier rounds.
    pub fn create_round(
        &mut self,
        points: &[DataPoint],
        n: usize,
        annotators: &[String],
        seed: u64,
    ) -> Result<Vec<LabelTask>, StoreError> {
        let exclude: HashSet<String> = self.index.keys().cloned().collect();
        let round = self.round + 1;
        let tasks = create_labeling_round(points, n, annotators, seed, round, &exclude)?;
        let mut events = vec![Event::RoundCreated { round, seed, n, annotators: annotators.to_vec() }];
        events.extend(tasks.iter().cloned().map(|task| Event::TaskCreated { task }));
        self.commit(events)?;
        Ok(tasks)
    }

    pub fn next_task(&self, annotator: &str) -> Result<NextTask, StoreError> {
        if !self.has_annotator(annotator) {
            return Err(StoreError::UnknownAnnotator(annotator.to_string()));
        }
        let mine: Vec<&LabelTask> = self.tasks.iter().filter(|t| t.assigned_annotator == annotator).collect();
        let done = mine.iter().filter(|t| t.status != TaskStatus::Pending).count() as u64;
        let task = mine.iter().find(|t| t.status == TaskStatus::Pending).map(|t| (*t).clone());
        let position = if task.is_some() { done + 1 } else { done };
        Ok(NextTask { task, position, total: mine.len() as u64 })
    }

    pub fn label(&mut self, point_id: &str, label: InitialLabel, flag_keyword: bool) -> Result<LabelTask, StoreError> {
        self.pending_mut(point_id)?;
        self.commit(vec![Event::Labeled { point_id: point_id.to_string(), label, flag_keyword, at: Utc::now() }])?;
        Ok(self.task(point_id).expect("just labeled").clone())
    }

    pub fn skip(&mut self, point_id: &str) -> Result<LabelTask, StoreError> {
        self.pending_mut(point_id)?;
        self.commit(vec![Event::Skipped { point_id: point_id.to_string(), at: Utc::now() }])?;
        Ok(self.task(point_id).expect("just skipped").clone())
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress { round: self.round, total: Counts::default(), annotators: BTreeMap::new(), labels: BTreeMap::new() };
        for a in &self.annotators {
            p.annotators.insert(a.clone(), Counts::default());
        }
        for t in &self.tasks {
            p.total.add(t.status);
            p.annotators.entry(t.assigned_annotator.clone()).or_default().add(t.status);
            if let Some(l) = t.label {
                *p.labels.entry(l.as_str().to_string()).or_default() += 1;
            }
        }
        p
    }

    /// Number of labeled tasks whose annotator flagged the keyword, per keyword.
    pub fn keyword_flags(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for t in self.tasks.iter().filter(|t| t.keyword_flag) {
            *out.entry(t.keyword.clone()).or_default() += 1;
        }
        out
    }

    /// Labeled tasks of the given rounds (all rounds when `None`), mapped to
    /// final labels. `Others` and unlabeled tasks are left out. Sorted by point id.
    pub fn export(&self, rounds: Option<&[u32]>) -> Vec<ExportedLabel> {
        export_training_set(&self.tasks, rounds)
    }
}

pub fn export_training_set(tasks: &[LabelTask], rounds: Option<&[u32]>) -> Vec<ExportedLabel> {
    let mut out: Vec<ExportedLabel> = tasks
        .iter()
        .filter(|t| rounds.is_none_or(|r| r.contains(&t.round)))
        .filter(|t| t.status == TaskStatus::Labeled)
        .filter_map(|t| {
            let initial = t.label?;
            Some(ExportedLabel {
                point_id: t.point_id.clone(),
                initial_label: initial,
                final_label: initial.to_final()?,
                annotator_id: t.assigned_annotator.clone(),
                round: t.round,
            })
        })
        .collect();
    out.sort_by(|a, b| a.point_id.cmp(&b.point_id));
    out
}
