//! Task assignment: assessment-first gating, the per-worker acquisition
//! cap, fewest-annotations-first scheduling and evaluation serving.
//!
//! [`Tasker`] is synchronous and not internally locked. A server shares it
//! behind one mutex, which makes the cap and uniqueness checks atomic with
//! the writes they guard.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TermGroup;
use crate::evalkit::{self, EvalError, EvaluationKind, EvaluationRecord, EvaluationTask, EvaluatorKind, Judgment};
use crate::model::{Annotation, AnnotationStore, ModelError, Phase, Snapshot};
use crate::ontology::{MainClass, Subclass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskerConfig {
    pub assessment_size: usize,
    pub assessment_sample: usize,
    pub gate_threshold: f64,
    pub cap: u32,
    pub seed: u64,
    pub port: u16,
}

impl Default for TaskerConfig {
    fn default() -> Self {
        TaskerConfig { assessment_size: 136, assessment_sample: 10, gate_threshold: 0.8, cap: 660, seed: 0, port: 8080 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaskerError {
    #[error("unknown worker `{0}`")]
    UnknownWorker(String),
    #[error("unknown term group `{0}`")]
    UnknownGroup(String),
    #[error("worker `{worker_id}` has no outstanding task for group `{group_id}`")]
    NotAssigned { worker_id: String, group_id: String },
    #[error("worker `{0}` is not registered as an evaluator")]
    NotAnEvaluator(String),
    #[error("evaluation task for `{group_id}` expects a {expected:?} judgment")]
    WrongJudgment { group_id: String, expected: EvaluationKind },
    #[error("{0}")]
    Conflict(String),
    #[error("assessment set: {0}")]
    Assessment(String),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("evaluation log: {0}")]
    Io(#[from] io::Error),
}

impl From<ModelError> for TaskerError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Duplicate { .. } => TaskerError::Conflict(e.to_string()),
            ModelError::UnknownGroup(g) => TaskerError::UnknownGroup(g),
            other => TaskerError::Model(other),
        }
    }
}

/// An assessment group and the main class its seed annotators favoured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentItem {
    pub group_id: String,
    pub dominant_main_class: MainClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedAnnotation {
    pub group_id: String,
    pub subclass: Subclass,
}

/// Read seed annotations from CSV `group_id,subclass`.
pub fn read_seed_csv<R: Read>(input: R) -> Result<Vec<SeedAnnotation>, TaskerError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TaskerError::Assessment(e.to_string()))
}

pub fn write_seed_csv<W: Write>(seed: &[SeedAnnotation], out: W) -> Result<(), TaskerError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group_id", "subclass"]).map_err(|e| TaskerError::Assessment(e.to_string()))?;
    for s in seed {
        w.write_record([s.group_id.as_str(), s.subclass.as_str()])
            .map_err(|e| TaskerError::Assessment(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Strict-majority main class of a set of subclass labels.
pub fn strict_majority_main_class<I: IntoIterator<Item = Subclass>>(labels: I) -> Option<MainClass> {
    let mut counts: BTreeMap<MainClass, usize> = BTreeMap::new();
    let mut total = 0;
    for s in labels {
        *counts.entry(s.main_class()).or_default() += 1;
        total += 1;
    }
    counts.into_iter().find(|&(_, n)| 2 * n > total).map(|(m, _)| m)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssessmentSet {
    items: Vec<AssessmentItem>,
}

impl AssessmentSet {
    /// Build the set from seed annotations. Only groups with a strict
    /// main-class majority qualify; when more qualify than `size`, a
    /// seeded draw picks which. Fewer than `size` is an error.
    pub fn from_seed(seed: &[SeedAnnotation], size: usize, rng_seed: u64) -> Result<Self, TaskerError> {
        let mut labels: BTreeMap<&str, Vec<Subclass>> = BTreeMap::new();
        for s in seed {
            labels.entry(s.group_id.as_str()).or_default().push(s.subclass);
        }
        let eligible: Vec<AssessmentItem> = labels
            .into_iter()
            .filter_map(|(g, ls)| {
                strict_majority_main_class(ls)
                    .map(|m| AssessmentItem { group_id: g.to_string(), dominant_main_class: m })
            })
            .collect();
        if eligible.len() < size {
            return Err(TaskerError::Assessment(format!(
                "{} seed groups have a strict main-class majority, {size} required",
                eligible.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut items: Vec<AssessmentItem> = eligible.choose_multiple(&mut rng, size).cloned().collect();
        items.sort_by(|a, b| a.group_id.cmp(&b.group_id));
        Ok(AssessmentSet { items })
    }

    pub fn from_items(items: Vec<AssessmentItem>) -> Self {
        AssessmentSet { items }
    }

    pub fn items(&self) -> &[AssessmentItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Per-worker sample, stratified by main class: each class gets its
    /// largest-remainder share of `sample`, drawn without replacement.
    fn sample_for(&self, worker_id: &str, sample: usize, seed: u64) -> Vec<String> {
        let sample = sample.min(self.items.len());
        let mut by_class: BTreeMap<MainClass, Vec<&str>> = BTreeMap::new();
        for item in &self.items {
            by_class.entry(item.dominant_main_class).or_default().push(&item.group_id);
        }
        let total = self.items.len();
        let mut quotas: Vec<(MainClass, usize, usize)> =
            by_class.iter().map(|(&m, ids)| (m, ids.len() * sample / total, ids.len() * sample % total)).collect();
        let mut remaining = sample - quotas.iter().map(|q| q.1).sum::<usize>();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| quotas[b].2.cmp(&quotas[a].2).then(quotas[a].0.cmp(&quotas[b].0)));
        for i in order {
            if remaining == 0 {
                break;
            }
            if quotas[i].1 < by_class[&quotas[i].0].len() {
                quotas[i].1 += 1;
                remaining -= 1;
            }
        }
        let mut rng = worker_rng(seed, worker_id);
        let mut picked: Vec<String> = Vec::with_capacity(sample);
        for (m, quota, _) in quotas {
            picked.extend(by_class[&m].choose_multiple(&mut rng, quota).map(|s| s.to_string()));
        }
        picked.shuffle(&mut rng);
        picked
    }
}

/// Stable per-worker RNG derived from the configured seed.
pub fn worker_rng(seed: u64, worker_id: &str) -> ChaCha8Rng {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in worker_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

pub trait Clock: Send {
    fn now(&mut self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&mut self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock advancing a fixed step per reading.
pub struct SteppingClock {
    next: DateTime<Utc>,
    step: Duration,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        SteppingClock { next: start, step }
    }
}

impl Clock for SteppingClock {
    fn now(&mut self) -> DateTime<Utc> {
        let t = self.next;
        self.next += self.step;
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Assessment,
    Acquisition,
    Evaluation,
}

impl TaskKind {
    pub fn phase(self) -> Phase {
        match self {
            TaskKind::Assessment => Phase::Assessment,
            TaskKind::Acquisition => Phase::Acquisition,
            TaskKind::Evaluation => Phase::EvaluationBatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskAssignment {
    pub worker_id: String,
    pub group_id: String,
    pub kind: TaskKind,
    pub issued_at: DateTime<Utc>,
    /// Present on evaluation tasks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationTask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTask {
    Assigned(TaskAssignment),
    Exhausted,
    GateFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateStatus {
    Pass,
    Fail,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerStatus {
    pub worker_id: String,
    pub gate: GateStatus,
    pub assessment_answered: usize,
    pub assessment_required: usize,
    pub acquisition_count: u32,
    pub cap: u32,
    pub evaluator_kind: Option<EvaluatorKind>,
    pub evaluations_done: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmitStatus {
    pub phase: Phase,
    pub main_class: MainClass,
    pub status: WorkerStatus,
}

#[derive(Debug, Default)]
struct WorkerState {
    evaluator_kind: Option<EvaluatorKind>,
    assessment_plan: Vec<String>,
    assessment_answered: usize,
    gate: Option<bool>,
    seen_acquisition: HashSet<usize>,
    outstanding: Option<TaskAssignment>,
    outstanding_eval: Option<TaskAssignment>,
    evaluated: HashSet<usize>,
}

pub struct Tasker {
    config: TaskerConfig,
    groups: BTreeMap<String, TermGroup>,
    assessment: HashMap<String, MainClass>,
    assessment_set: AssessmentSet,
    pool: Vec<String>,
    pool_index: HashMap<String, usize>,
    /// `(load, pool index)`; load counts annotations plus open assignments.
    queue: BTreeSet<(u32, usize)>,
    load: Vec<u32>,
    store: AnnotationStore,
    workers: HashMap<String, WorkerState>,
    eval_tasks: Vec<EvaluationTask>,
    evaluations: Vec<EvaluationRecord>,
    eval_log: Option<BufWriter<File>>,
    clock: Box<dyn Clock>,
}

impl Tasker {
    /// `store` must know every group id in `groups`. Acquisition draws from
    /// all groups outside the assessment set.
    pub fn new(
        config: TaskerConfig,
        groups: Vec<TermGroup>,
        assessment_set: AssessmentSet,
        store: AnnotationStore,
        clock: Box<dyn Clock>,
    ) -> Result<Self, TaskerError> {
        let groups: BTreeMap<String, TermGroup> = groups.into_iter().map(|g| (g.id.clone(), g)).collect();
        for item in assessment_set.items() {
            if !groups.contains_key(&item.group_id) {
                return Err(TaskerError::UnknownGroup(item.group_id.clone()));
            }
        }
        let assessment: HashMap<String, MainClass> =
            assessment_set.items().iter().map(|i| (i.group_id.clone(), i.dominant_main_class)).collect();
        let pool: Vec<String> = groups.keys().filter(|g| !assessment.contains_key(*g)).cloned().collect();
        let pool_index: HashMap<String, usize> = pool.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        let mut load = vec![0u32; pool.len()];
        for a in store.annotations().iter().filter(|a| a.phase == Phase::Acquisition) {
            if let Some(&i) = pool_index.get(&a.group_id) {
                load[i] += 1;
            }
        }
        let queue = load.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        Ok(Tasker {
            config,
            groups,
            assessment,
            assessment_set,
            pool,
            pool_index,
            queue,
            load,
            store,
            workers: HashMap::new(),
            eval_tasks: Vec::new(),
            evaluations: Vec::new(),
            eval_log: None,
            clock,
        })
    }

    pub fn config(&self) -> &TaskerConfig {
        &self.config
    }

    pub fn group(&self, id: &str) -> Option<&TermGroup> {
        self.groups.get(id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &TermGroup> {
        self.groups.values()
    }

    pub fn assessment_set(&self) -> &AssessmentSet {
        &self.assessment_set
    }

    /// Per-group acquisition load (annotations plus open assignments).
    pub fn acquisition_load(&self) -> BTreeMap<&str, u32> {
        self.pool.iter().map(String::as_str).zip(self.load.iter().copied()).collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        let passed = self.workers.iter().filter(|(_, w)| w.gate == Some(true)).map(|(id, _)| id.clone()).collect();
        self.store.snapshot().with_gate_flags(&passed)
    }

    pub fn evaluations(&self) -> &[EvaluationRecord] {
        &self.evaluations
    }

    /// Serve these tasks to evaluators, in order.
    pub fn set_evaluation_tasks(&mut self, tasks: Vec<EvaluationTask>) {
        self.eval_tasks = tasks;
        for w in self.workers.values_mut() {
            w.evaluated.clear();
            w.outstanding_eval = None;
        }
        let done: Vec<(String, String, EvaluationKind)> =
            self.evaluations.iter().map(|r| (r.evaluator_id.clone(), r.group_id.clone(), r.judgment.kind())).collect();
        for (who, group, kind) in done {
            self.mark_evaluated(&who, &group, kind);
        }
    }

    pub fn evaluation_tasks(&self) -> &[EvaluationTask] {
        &self.eval_tasks
    }

    /// Append judgments to (and replay them from) a CSV log.
    pub fn attach_evaluation_log(&mut self, path: impl AsRef<Path>) -> Result<(), TaskerError> {
        let path = path.as_ref();
        if path.exists() && std::fs::metadata(path)?.len() > 0 {
            let records = evalkit::read_records(File::open(path)?)?;
            for r in records {
                self.mark_evaluated(&r.evaluator_id, &r.group_id, r.judgment.kind());
                self.evaluations.push(r);
            }
        }
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut file = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        if fresh {
            writeln!(file, "group_id,evaluator_id,evaluator_kind,score,intensifier_valid")?;
            file.flush()?;
        }
        self.eval_log = Some(file);
        Ok(())
    }

    fn mark_evaluated(&mut self, who: &str, group: &str, kind: EvaluationKind) {
        let Some(i) = self.eval_tasks.iter().position(|t| t.group_id == group && t.kind == kind) else { return };
        if let Some(w) = self.workers.get_mut(who) {
            w.evaluated.insert(i);
        }
    }

    /// Register a worker, or refresh a known one. Progress is rebuilt from
    /// the annotation log, so re-registering after a restart resumes.
    pub fn register(&mut self, worker_id: &str, evaluator_kind: Option<EvaluatorKind>) -> WorkerStatus {
        if !self.workers.contains_key(worker_id) {
            let mut state = WorkerState {
                assessment_plan: self.assessment_set.sample_for(
                    worker_id,
                    self.config.assessment_sample,
                    self.config.seed,
                ),
                ..Default::default()
            };
            for a in self.store.annotations().iter().filter(|a| a.worker_id == worker_id) {
                match a.phase {
                    Phase::Assessment => state.assessment_answered += 1,
                    Phase::Acquisition => {
                        if let Some(&i) = self.pool_index.get(&a.group_id) {
                            state.seen_acquisition.insert(i);
                        }
                    }
                    Phase::EvaluationBatch => {}
                }
            }
            for (i, t) in self.eval_tasks.iter().enumerate() {
                if self
                    .evaluations
                    .iter()
                    .any(|r| r.evaluator_id == worker_id && r.group_id == t.group_id && r.judgment.kind() == t.kind)
                {
                    state.evaluated.insert(i);
                }
            }
            self.workers.insert(worker_id.to_string(), state);
            self.refresh_gate(worker_id);
        }
        let state = self.workers.get_mut(worker_id).expect("inserted above");
        if evaluator_kind.is_some() {
            state.evaluator_kind = evaluator_kind;
        }
        self.status(worker_id).expect("registered")
    }

    fn worker(&self, worker_id: &str) -> Result<&WorkerState, TaskerError> {
        self.workers.get(worker_id).ok_or_else(|| TaskerError::UnknownWorker(worker_id.to_string()))
    }

    pub fn status(&self, worker_id: &str) -> Result<WorkerStatus, TaskerError> {
        let w = self.worker(worker_id)?;
        Ok(WorkerStatus {
            worker_id: worker_id.to_string(),
            gate: self.gate_worker(worker_id)?,
            assessment_answered: w.assessment_answered,
            assessment_required: w.assessment_plan.len(),
            acquisition_count: self.store.phase_total(worker_id, Phase::Acquisition),
            cap: self.config.cap,
            evaluator_kind: w.evaluator_kind,
            evaluations_done: w.evaluated.len(),
        })
    }

    /// `Pending` until the worker's assessment sample is answered, then
    /// `Pass` iff the share of answers matching the item's dominant main
    /// class reaches the threshold.
    pub fn gate_worker(&self, worker_id: &str) -> Result<GateStatus, TaskerError> {
        let w = self.worker(worker_id)?;
        Ok(match w.gate {
            Some(true) => GateStatus::Pass,
            Some(false) => GateStatus::Fail,
            None => GateStatus::Pending,
        })
    }

    fn refresh_gate(&mut self, worker_id: &str) {
        let Some(w) = self.workers.get(worker_id) else { return };
        let required = w.assessment_plan.len();
        if w.assessment_answered < required {
            return;
        }
        let answers: Vec<bool> = self
            .store
            .annotations()
            .iter()
            .filter(|a| a.worker_id == worker_id && a.phase == Phase::Assessment)
            .filter_map(|a| self.assessment.get(&a.group_id).map(|&m| a.subclass.main_class() == m))
            .collect();
        let passed = gate_passes(&answers, self.config.gate_threshold);
        self.workers.get_mut(worker_id).expect("checked").gate = Some(passed);
        self.store.set_gate(worker_id, passed);
    }

    /// Next task for the worker's annotation flow. An open assignment is
    /// returned again until it is answered.
    pub fn next_task(&mut self, worker_id: &str) -> Result<NextTask, TaskerError> {
        let w = self.worker(worker_id)?;
        if let Some(a) = &w.outstanding {
            return Ok(NextTask::Assigned(a.clone()));
        }
        match w.gate {
            Some(false) => Ok(NextTask::GateFailed),
            None => {
                let Some(group) = w.assessment_plan.get(w.assessment_answered).cloned() else {
                    return Ok(NextTask::Exhausted);
                };
                Ok(NextTask::Assigned(self.issue(worker_id, group, TaskKind::Assessment)))
            }
            Some(true) => {
                if self.store.phase_total(worker_id, Phase::Acquisition) >= self.config.cap {
                    return Ok(NextTask::Exhausted);
                }
                let seen = &w.seen_acquisition;
                let Some(&(load, idx)) = self.queue.iter().find(|(_, i)| !seen.contains(i)) else {
                    return Ok(NextTask::Exhausted);
                };
                self.queue.remove(&(load, idx));
                self.queue.insert((load + 1, idx));
                self.load[idx] += 1;
                let group = self.pool[idx].clone();
                self.workers.get_mut(worker_id).expect("checked").seen_acquisition.insert(idx);
                Ok(NextTask::Assigned(self.issue(worker_id, group, TaskKind::Acquisition)))
            }
        }
    }

    fn issue(&mut self, worker_id: &str, group_id: String, kind: TaskKind) -> TaskAssignment {
        let assignment = TaskAssignment {
            worker_id: worker_id.to_string(),
            group_id,
            kind,
            issued_at: self.clock.now(),
            evaluation: None,
        };
        self.workers.get_mut(worker_id).expect("registered").outstanding = Some(assignment.clone());
        assignment
    }

    /// Next evaluation task for an evaluator account.
    pub fn next_evaluation(&mut self, worker_id: &str) -> Result<NextTask, TaskerError> {
        let w = self.worker(worker_id)?;
        if w.evaluator_kind.is_none() {
            return Err(TaskerError::NotAnEvaluator(worker_id.to_string()));
        }
        if let Some(a) = &w.outstanding_eval {
            return Ok(NextTask::Assigned(a.clone()));
        }
        let Some(i) = (0..self.eval_tasks.len()).find(|i| !w.evaluated.contains(i)) else {
            return Ok(NextTask::Exhausted);
        };
        let task = self.eval_tasks[i].clone();
        let assignment = TaskAssignment {
            worker_id: worker_id.to_string(),
            group_id: task.group_id.clone(),
            kind: TaskKind::Evaluation,
            issued_at: self.clock.now(),
            evaluation: Some(task),
        };
        self.workers.get_mut(worker_id).expect("checked").outstanding_eval = Some(assignment.clone());
        Ok(NextTask::Assigned(assignment))
    }

    /// Record a subclass for the worker's open assignment on `group_id`.
    /// An open evaluation task on the group takes an evaluation-batch
    /// annotation and stays open for its judgment.
    pub fn submit(&mut self, worker_id: &str, group_id: &str, subclass: Subclass) -> Result<SubmitStatus, TaskerError> {
        let w = self.worker(worker_id)?;
        if !self.groups.contains_key(group_id) {
            return Err(TaskerError::UnknownGroup(group_id.to_string()));
        }
        let kind = match (&w.outstanding, &w.outstanding_eval) {
            (Some(a), _) if a.group_id == group_id => a.kind,
            (_, Some(a)) if a.group_id == group_id => TaskKind::Evaluation,
            _ => {
                let answered = Phase::ALL.iter().any(|&p| self.store.contains(worker_id, group_id, p));
                return Err(if answered {
                    TaskerError::Conflict(format!("worker `{worker_id}` already answered group `{group_id}`"))
                } else {
                    TaskerError::NotAssigned { worker_id: worker_id.to_string(), group_id: group_id.to_string() }
                });
            }
        };
        let phase = kind.phase();
        if phase == Phase::Acquisition && self.store.phase_total(worker_id, phase) >= self.config.cap {
            return Err(TaskerError::Conflict(format!("worker `{worker_id}` reached the cap of {}", self.config.cap)));
        }
        let timestamp = self.clock.now();
        self.store.record_annotation(Annotation {
            worker_id: worker_id.to_string(),
            group_id: group_id.to_string(),
            subclass,
            phase,
            timestamp,
        })?;
        let w = self.workers.get_mut(worker_id).expect("checked");
        match kind {
            TaskKind::Assessment => {
                w.outstanding = None;
                w.assessment_answered += 1;
                self.refresh_gate(worker_id);
            }
            TaskKind::Acquisition => w.outstanding = None,
            TaskKind::Evaluation => {}
        }
        Ok(SubmitStatus { phase, main_class: subclass.main_class(), status: self.status(worker_id)? })
    }

    /// Record an evaluator's judgment on their open evaluation task.
    pub fn evaluate(
        &mut self,
        worker_id: &str,
        group_id: &str,
        judgment: Judgment,
    ) -> Result<WorkerStatus, TaskerError> {
        let w = self.worker(worker_id)?;
        let evaluator_kind = w.evaluator_kind.ok_or_else(|| TaskerError::NotAnEvaluator(worker_id.to_string()))?;
        let task = match &w.outstanding_eval {
            Some(a) if a.group_id == group_id => a.evaluation.clone().expect("evaluation assignments carry a task"),
            _ => {
                let done = self.evaluations.iter().any(|r| {
                    r.evaluator_id == worker_id && r.group_id == group_id && r.judgment.kind() == judgment.kind()
                });
                return Err(if done {
                    TaskerError::Conflict(format!("evaluator `{worker_id}` already judged group `{group_id}`"))
                } else {
                    TaskerError::NotAssigned { worker_id: worker_id.to_string(), group_id: group_id.to_string() }
                });
            }
        };
        if task.kind != judgment.kind() {
            return Err(TaskerError::WrongJudgment { group_id: group_id.to_string(), expected: task.kind });
        }
        let record = EvaluationRecord::new(group_id, worker_id, evaluator_kind, judgment)?;
        if let Some(log) = self.eval_log.as_mut() {
            let mut buf = Vec::new();
            evalkit::write_records(std::slice::from_ref(&record), &mut buf)?;
            // Skip the header line the writer emits.
            let body = buf.splitn(2, |&b| b == b'\n').nth(1).unwrap_or_default();
            log.write_all(body)?;
            log.flush()?;
        }
        self.evaluations.push(record);
        self.workers.get_mut(worker_id).expect("checked").outstanding_eval = None;
        self.mark_evaluated(worker_id, group_id, task.kind);
        self.status(worker_id)
    }
}

/// Share of correct answers at or above the threshold. An empty answer
/// list never passes.
pub fn gate_passes(answers: &[bool], threshold: f64) -> bool {
    if answers.is_empty() {
        return false;
    }
    let correct = answers.iter().filter(|&&c| c).count();
    correct as f64 >= threshold * answers.len() as f64 - 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use std::collections::BTreeSet as Set;

    fn group(id: &str) -> TermGroup {
        TermGroup::new(id.to_string(), Set::from([id.to_string()]), 1)
    }

    fn clock() -> Box<dyn Clock> {
        Box::new(SteppingClock::new(Utc.with_ymd_and_hms(2017, 2, 1, 0, 0, 0).unwrap(), Duration::seconds(1)))
    }

    /// 10 assessment items (8 emotion, 1 intensifying, 1 none) and `pool`
    /// acquisition groups.
    fn tasker(pool: usize, cap: u32) -> Tasker {
        let mut groups = Vec::new();
        let mut items = Vec::new();
        for i in 0..10 {
            let id = format!("a{i:02}");
            groups.push(group(&id));
            let m = match i {
                8 => MainClass::Intensifying,
                9 => MainClass::None,
                _ => MainClass::Emotion,
            };
            items.push(AssessmentItem { group_id: id, dominant_main_class: m });
        }
        for i in 0..pool {
            groups.push(group(&format!("p{i:03}")));
        }
        let store = AnnotationStore::in_memory(groups.iter().map(|g| g.id.clone()));
        let config = TaskerConfig { cap, ..Default::default() };
        Tasker::new(config, groups, AssessmentSet::from_items(items), store, clock()).unwrap()
    }

    fn expect_assigned(t: NextTask) -> TaskAssignment {
        match t {
            NextTask::Assigned(a) => a,
            other => panic!("expected an assignment, got {other:?}"),
        }
    }

    /// Answer the whole assessment, getting `correct` of the items right.
    fn run_assessment(t: &mut Tasker, worker: &str, correct: usize) -> GateStatus {
        let mut right = 0;
        loop {
            match t.next_task(worker).unwrap() {
                NextTask::Assigned(a) if a.kind == TaskKind::Assessment => {
                    let truth = t.assessment[&a.group_id];
                    let want_right = right < correct;
                    let sc = match (truth, want_right) {
                        (MainClass::Emotion, true) => Subclass::Fear,
                        (MainClass::Intensifying, true) => Subclass::Weakening,
                        (MainClass::None, true) => Subclass::None,
                        (MainClass::None, false) => Subclass::Joy,
                        (_, false) => Subclass::None,
                    };
                    right += usize::from(want_right);
                    t.submit(worker, &a.group_id, sc).unwrap();
                }
                _ => return t.gate_worker(worker).unwrap(),
            }
        }
    }

    #[test]
    fn new_worker_gets_assessment_first() {
        let mut t = tasker(5, 660);
        t.register("w", None);
        let a = expect_assigned(t.next_task("w").unwrap());
        assert_eq!(a.kind, TaskKind::Assessment);
        assert!(a.group_id.starts_with('a'));
        // Asking again returns the same open task.
        assert_eq!(expect_assigned(t.next_task("w").unwrap()), a);
        assert_eq!(t.gate_worker("w").unwrap(), GateStatus::Pending);
    }

    #[test]
    fn unknown_worker_is_not_found() {
        let mut t = tasker(5, 660);
        assert!(matches!(t.next_task("ghost"), Err(TaskerError::UnknownWorker(_))));
        assert!(matches!(t.gate_worker("ghost"), Err(TaskerError::UnknownWorker(_))));
    }

    #[test]
    fn gate_at_eight_of_ten_passes_seven_fails() {
        let mut t = tasker(5, 660);
        t.register("good", None);
        t.register("bad", None);
        assert_eq!(run_assessment(&mut t, "good", 8), GateStatus::Pass);
        assert_eq!(run_assessment(&mut t, "bad", 7), GateStatus::Fail);
        assert_eq!(t.next_task("bad").unwrap(), NextTask::GateFailed);
        assert_eq!(expect_assigned(t.next_task("good").unwrap()).kind, TaskKind::Acquisition);
    }

    #[test]
    fn other_emotion_counts_as_correct() {
        let mut t = tasker(1, 660);
        t.register("w", None);
        // Always answer "anger": right on the 8 emotion items only.
        while let NextTask::Assigned(a) = t.next_task("w").unwrap() {
            if a.kind != TaskKind::Assessment {
                break;
            }
            t.submit("w", &a.group_id, Subclass::Anger).unwrap();
        }
        assert_eq!(t.gate_worker("w").unwrap(), GateStatus::Pass);
    }

    #[test]
    fn submit_requires_assignment() {
        let mut t = tasker(3, 660);
        t.register("w", None);
        assert!(matches!(t.submit("w", "p000", Subclass::Joy), Err(TaskerError::NotAssigned { .. })));
        assert!(matches!(t.submit("w", "nope", Subclass::Joy), Err(TaskerError::UnknownGroup(_))));
        let a = expect_assigned(t.next_task("w").unwrap());
        let s = t.submit("w", &a.group_id, Subclass::Amplifying).unwrap();
        assert_eq!(s.main_class, MainClass::Intensifying);
        assert_eq!(s.status.assessment_answered, 1);
        assert!(matches!(t.submit("w", &a.group_id, Subclass::Amplifying), Err(TaskerError::Conflict(_))));
    }

    #[test]
    fn cap_and_exhaustion() {
        let mut t = tasker(5, 3);
        t.register("w", None);
        run_assessment(&mut t, "w", 10);
        let mut seen = Set::new();
        while let NextTask::Assigned(a) = t.next_task("w").unwrap() {
            assert!(seen.insert(a.group_id.clone()));
            t.submit("w", &a.group_id, Subclass::Joy).unwrap();
        }
        assert_eq!(seen.len(), 3);
        assert_eq!(t.next_task("w").unwrap(), NextTask::Exhausted);

        let mut t = tasker(2, 660);
        t.register("w", None);
        run_assessment(&mut t, "w", 10);
        for _ in 0..2 {
            let a = expect_assigned(t.next_task("w").unwrap());
            t.submit("w", &a.group_id, Subclass::None).unwrap();
        }
        assert_eq!(t.next_task("w").unwrap(), NextTask::Exhausted);
    }

    #[test]
    fn fewest_first_balances_groups() {
        let mut t = tasker(7, 660);
        for w in 0..12 {
            let id = format!("w{w}");
            t.register(&id, None);
            run_assessment(&mut t, &id, 10);
            for _ in 0..3 {
                let a = expect_assigned(t.next_task(&id).unwrap());
                t.submit(&id, &a.group_id, Subclass::Joy).unwrap();
            }
        }
        let load: Vec<u32> = t.acquisition_load().values().copied().collect();
        assert!(load.iter().max().unwrap() - load.iter().min().unwrap() <= 1, "{load:?}");
    }

    #[test]
    fn reregistering_resumes_from_the_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let build = || {
            let mut t = tasker(4, 660);
            let ids: Vec<String> = t.groups().map(|g| g.id.clone()).collect();
            t.store = AnnotationStore::open(&path, ids).unwrap();
            t
        };
        {
            let mut t = build();
            t.register("w", None);
            run_assessment(&mut t, "w", 9);
            let a = expect_assigned(t.next_task("w").unwrap());
            t.submit("w", &a.group_id, Subclass::Joy).unwrap();
        }
        let mut t = build();
        let status = t.register("w", None);
        assert_eq!(status.gate, GateStatus::Pass);
        assert_eq!(status.acquisition_count, 1);
        assert_eq!(status.assessment_answered, 10);
    }

    #[test]
    fn evaluation_flow() {
        let mut t = tasker(2, 660);
        t.set_evaluation_tasks(vec![
            EvaluationTask { group_id: "p000".into(), summary: "s0".into(), kind: EvaluationKind::Validity },
            EvaluationTask { group_id: "p001".into(), summary: "s1".into(), kind: EvaluationKind::IntensifierCheck },
        ]);
        t.register("annot", None);
        assert!(matches!(t.next_evaluation("annot"), Err(TaskerError::NotAnEvaluator(_))));
        t.register("e1", Some(EvaluatorKind::Expert));
        let a = expect_assigned(t.next_evaluation("e1").unwrap());
        assert_eq!(a.evaluation.as_ref().unwrap().summary, "s0");
        assert!(matches!(
            t.evaluate("e1", "p000", Judgment::IntensifierValid(true)),
            Err(TaskerError::WrongJudgment { .. })
        ));
        t.submit("e1", "p000", Subclass::Joy).unwrap();
        t.evaluate("e1", "p000", Judgment::Score(4)).unwrap();
        assert!(matches!(t.evaluate("e1", "p000", Judgment::Score(4)), Err(TaskerError::Conflict(_))));
        let b = expect_assigned(t.next_evaluation("e1").unwrap());
        assert_eq!(b.group_id, "p001");
        t.evaluate("e1", "p001", Judgment::IntensifierValid(false)).unwrap();
        assert_eq!(t.next_evaluation("e1").unwrap(), NextTask::Exhausted);
        assert_eq!(t.evaluations().len(), 2);
        assert_eq!(t.snapshot().annotations()[0].phase, Phase::EvaluationBatch);
    }

    #[test]
    fn assessment_set_from_seed() {
        let seed: Vec<SeedAnnotation> = [
            ("g1", Subclass::Joy),
            ("g1", Subclass::Fear),
            ("g1", Subclass::None),
            ("g2", Subclass::None),
            ("g2", Subclass::Joy),
            ("g3", Subclass::Weakening),
        ]
        .into_iter()
        .map(|(g, s)| SeedAnnotation { group_id: g.into(), subclass: s })
        .collect();
        let set = AssessmentSet::from_seed(&seed, 2, 0).unwrap();
        assert_eq!(
            set.items(),
            &[
                AssessmentItem { group_id: "g1".into(), dominant_main_class: MainClass::Emotion },
                AssessmentItem { group_id: "g3".into(), dominant_main_class: MainClass::Intensifying },
            ]
        );
        assert!(AssessmentSet::from_seed(&seed, 3, 0).is_err());
        let mut buf = Vec::new();
        write_seed_csv(&seed, &mut buf).unwrap();
        assert_eq!(read_seed_csv(&buf[..]).unwrap(), seed);
    }

    #[test]
    fn stratified_sample_covers_classes() {
        let t = tasker(0, 660);
        let plan = t.assessment_set.sample_for("anyone", 10, 0);
        assert_eq!(plan.len(), 10);
        assert_eq!(plan.iter().collect::<Set<_>>().len(), 10);
        let plan = t.assessment_set.sample_for("anyone", 5, 0);
        let classes: Vec<MainClass> = plan.iter().map(|g| t.assessment[g]).collect();
        assert_eq!(classes.iter().filter(|&&m| m == MainClass::Emotion).count(), 4);
    }

    #[test]
    fn gate_threshold_is_inclusive() {
        let mut answers = vec![true; 8];
        answers.extend([false; 2]);
        assert!(gate_passes(&answers, 0.8));
        answers[0] = false;
        assert!(!gate_passes(&answers, 0.8));
        assert!(!gate_passes(&[], 0.8));
    }
}
