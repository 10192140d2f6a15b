//! Annotation records, derived worker profiles and the append-only store.
//!
//! The annotation log is the only authoritative state. Profiles are a cache
//! rebuilt from the log, so filtering can always be re-run over raw history.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ontology::{Subclass, SubclassCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Assessment,
    Acquisition,
    EvaluationBatch,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Assessment, Phase::Acquisition, Phase::EvaluationBatch];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub worker_id: String,
    pub group_id: String,
    pub subclass: Subclass,
    pub phase: Phase,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WorkerProfile {
    pub worker_id: String,
    pub counts: BTreeMap<Phase, SubclassCounts>,
    pub mu_assessment: Option<f64>,
    pub mu_acquisition: Option<f64>,
    pub gate_passed: bool,
    pub excluded: bool,
}

impl WorkerProfile {
    fn new(worker_id: &str) -> Self {
        WorkerProfile { worker_id: worker_id.to_string(), ..Default::default() }
    }

    pub fn phase_counts(&self, phase: Phase) -> SubclassCounts {
        self.counts.get(&phase).copied().unwrap_or_default()
    }

    fn add(&mut self, phase: Phase, subclass: Subclass) {
        self.counts.entry(phase).or_default().increment(subclass);
        let mu = |c: SubclassCounts| (c.total() > 0).then(|| c.max() as f64 / c.total() as f64);
        self.mu_assessment = mu(self.phase_counts(Phase::Assessment));
        self.mu_acquisition = mu(self.phase_counts(Phase::Acquisition));
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("worker `{worker_id}` already annotated group `{group_id}` in phase {phase:?}")]
    Duplicate { worker_id: String, group_id: String, phase: Phase },
    #[error("unknown term group `{0}`")]
    UnknownGroup(String),
    #[error("annotation log: {0}")]
    Io(#[from] io::Error),
    #[error("annotation log line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ack {
    pub worker_id: String,
    pub phase: Phase,
    /// Annotations by this worker in this phase, including the new one.
    pub phase_total: u32,
}

/// Immutable view of every annotation and the profiles derived from them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    annotations: Arc<Vec<Annotation>>,
    profiles: BTreeMap<String, WorkerProfile>,
}

impl Snapshot {
    /// Rebuild a snapshot from annotations alone. Gate and exclusion flags
    /// start cleared.
    pub fn from_annotations(annotations: Vec<Annotation>) -> Self {
        let mut profiles: BTreeMap<String, WorkerProfile> = BTreeMap::new();
        for a in &annotations {
            profiles
                .entry(a.worker_id.clone())
                .or_insert_with(|| WorkerProfile::new(&a.worker_id))
                .add(a.phase, a.subclass);
        }
        Snapshot { annotations: Arc::new(annotations), profiles }
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn profiles(&self) -> &BTreeMap<String, WorkerProfile> {
        &self.profiles
    }

    pub fn profile(&self, worker_id: &str) -> Option<&WorkerProfile> {
        self.profiles.get(worker_id)
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    /// Copy with the given workers flagged as excluded and their
    /// annotations dropped.
    pub fn excluding(&self, excluded: &BTreeSet<String>) -> Snapshot {
        let annotations = self.annotations.iter().filter(|a| !excluded.contains(&a.worker_id)).cloned().collect();
        let mut profiles = self.profiles.clone();
        for (id, p) in profiles.iter_mut() {
            p.excluded = excluded.contains(id);
        }
        Snapshot { annotations: Arc::new(annotations), profiles }
    }

    pub fn with_gate_flags(mut self, passed: &BTreeSet<String>) -> Snapshot {
        for (id, p) in self.profiles.iter_mut() {
            p.gate_passed = passed.contains(id);
        }
        self
    }

    /// Parse a line-delimited annotation log.
    pub fn read_log<R: Read>(input: R) -> Result<Snapshot, ModelError> {
        Ok(Snapshot::from_annotations(read_annotations(input)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Snapshot, ModelError> {
        Self::read_log(File::open(path)?)
    }

    pub fn write_log<W: Write>(&self, out: W) -> Result<(), ModelError> {
        let mut out = BufWriter::new(out);
        for a in self.annotations.iter() {
            write_annotation(&mut out, a)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn write_annotation<W: Write>(out: &mut W, a: &Annotation) -> io::Result<()> {
    serde_json::to_writer(&mut *out, a)?;
    out.write_all(b"\n")
}

fn read_annotations<R: Read>(input: R) -> Result<Vec<Annotation>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a = serde_json::from_str(&line).map_err(|e| ModelError::Corrupt { line: i + 1, message: e.to_string() })?;
        out.push(a);
    }
    Ok(out)
}

/// Append-only annotation store with an optional on-disk log.
///
/// Not internally synchronized; callers that share a store across threads
/// wrap it in a lock so the duplicate check and the append happen together.
#[derive(Debug)]
pub struct AnnotationStore {
    groups: HashSet<String>,
    annotations: Vec<Annotation>,
    seen: HashSet<(String, String, Phase)>,
    profiles: BTreeMap<String, WorkerProfile>,
    log: Option<(PathBuf, BufWriter<File>)>,
}

impl AnnotationStore {
    pub fn in_memory<I, S>(groups: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AnnotationStore {
            groups: groups.into_iter().map(Into::into).collect(),
            annotations: Vec::new(),
            seen: HashSet::new(),
            profiles: BTreeMap::new(),
            log: None,
        }
    }

    /// Open (or create) a log file, replaying existing entries.
    pub fn open<I, S>(path: impl AsRef<Path>, groups: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let path = path.as_ref().to_path_buf();
        let mut store = Self::in_memory(groups);
        if path.exists() {
            for a in read_annotations(File::open(&path)?)? {
                store.insert(a)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        store.log = Some((path, BufWriter::new(file)));
        Ok(store)
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn has_group(&self, group_id: &str) -> bool {
        self.groups.contains(group_id)
    }

    pub fn contains(&self, worker_id: &str, group_id: &str, phase: Phase) -> bool {
        self.seen.contains(&(worker_id.to_string(), group_id.to_string(), phase))
    }

    fn insert(&mut self, a: Annotation) -> Result<u32, ModelError> {
        if !self.groups.contains(&a.group_id) {
            return Err(ModelError::UnknownGroup(a.group_id));
        }
        let key = (a.worker_id.clone(), a.group_id.clone(), a.phase);
        if self.seen.contains(&key) {
            return Err(ModelError::Duplicate { worker_id: a.worker_id, group_id: a.group_id, phase: a.phase });
        }
        self.seen.insert(key);
        let profile = self.profiles.entry(a.worker_id.clone()).or_insert_with(|| WorkerProfile::new(&a.worker_id));
        profile.add(a.phase, a.subclass);
        let total = profile.phase_counts(a.phase).total();
        self.annotations.push(a);
        Ok(total)
    }

    /// Validate, persist and apply one annotation.
    pub fn record_annotation(&mut self, a: Annotation) -> Result<Ack, ModelError> {
        if !self.groups.contains(&a.group_id) {
            return Err(ModelError::UnknownGroup(a.group_id));
        }
        if self.contains(&a.worker_id, &a.group_id, a.phase) {
            return Err(ModelError::Duplicate { worker_id: a.worker_id, group_id: a.group_id, phase: a.phase });
        }
        if let Some((_, writer)) = self.log.as_mut() {
            write_annotation(writer, &a)?;
            writer.flush()?;
        }
        let worker_id = a.worker_id.clone();
        let phase = a.phase;
        let phase_total = self.insert(a)?;
        Ok(Ack { worker_id, phase, phase_total })
    }

    pub fn set_gate(&mut self, worker_id: &str, passed: bool) {
        self.profiles.entry(worker_id.to_string()).or_insert_with(|| WorkerProfile::new(worker_id)).gate_passed =
            passed;
    }

    pub fn profile(&self, worker_id: &str) -> Option<&WorkerProfile> {
        self.profiles.get(worker_id)
    }

    pub fn phase_total(&self, worker_id: &str, phase: Phase) -> u32 {
        self.profiles.get(worker_id).map(|p| p.phase_counts(phase).total()).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { annotations: Arc::new(self.annotations.clone()), profiles: self.profiles.clone() }
    }
}
