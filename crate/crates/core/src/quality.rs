//! Gold-standard-free spam filtering.
//!
//! Each worker's statistic is the share of their annotations that went to
//! their single most used subclass. Exclusion curves over the thresholds
//! `x/10` are computed for the assessment and acquisition populations; the
//! threshold where the two curves are closest is taken as optimal, and
//! workers at or above it in both phases are excluded.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use crate::model::{Phase, Snapshot};
use crate::ontology::SubclassCounts;

pub const THRESHOLD_STEPS: u32 = 10;
pub const DEFAULT_MIN_ANNOTATIONS: u32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("worker `{worker_id}` has no annotations in phase {phase:?}")]
    UndefinedMu { worker_id: String, phase: Phase },
    #[error("no worker has {0:?} annotations")]
    EmptyPopulation(Phase),
    #[error("threshold step {0} is outside 1..=10")]
    BadThreshold(u32),
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
}

/// Max-subclass ratio of a tally, or `None` for an empty tally.
pub fn mu_of(counts: &SubclassCounts) -> Option<f64> {
    let total = counts.total();
    (total > 0).then(|| counts.max() as f64 / total as f64)
}

/// `mu >= x/10`, decided on integers.
fn mu_reaches(counts: &SubclassCounts, x: u32) -> bool {
    u64::from(counts.max()) * u64::from(THRESHOLD_STEPS) >= u64::from(x) * u64::from(counts.total())
}

pub fn worker_mu(snapshot: &Snapshot, worker_id: &str, phase: Phase) -> Result<f64, QualityError> {
    snapshot
        .profile(worker_id)
        .and_then(|p| mu_of(&p.phase_counts(phase)))
        .ok_or_else(|| QualityError::UndefinedMu { worker_id: worker_id.to_string(), phase })
}

/// Share of a population still at or above each threshold, for
/// `x = 1..=10`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExclusionCurve {
    pub population: Phase,
    pub population_size: u32,
    /// `at_or_above[x - 1]` = workers with `mu >= x/10`.
    pub at_or_above: [u32; THRESHOLD_STEPS as usize],
}

impl ExclusionCurve {
    pub fn from_counts<'a, I>(population: Phase, tallies: I) -> Result<Self, QualityError>
    where
        I: IntoIterator<Item = &'a SubclassCounts>,
    {
        let mut at_or_above = [0u32; THRESHOLD_STEPS as usize];
        let mut size = 0;
        for c in tallies.into_iter().filter(|c| c.total() > 0) {
            size += 1;
            for x in 1..=THRESHOLD_STEPS {
                if mu_reaches(c, x) {
                    at_or_above[(x - 1) as usize] += 1;
                }
            }
        }
        if size == 0 {
            return Err(QualityError::EmptyPopulation(population));
        }
        Ok(ExclusionCurve { population, population_size: size, at_or_above })
    }

    /// `f(x) = 1 - |{w : mu_w < x/10}| / |W|`.
    pub fn value(&self, x: u32) -> f64 {
        let below = self.population_size - self.at_or_above[(x - 1) as usize];
        1.0 - below as f64 / self.population_size as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (1..=THRESHOLD_STEPS).map(|x| self.value(x)).collect()
    }
}

/// Assessment and acquisition curves for a snapshot.
pub fn exclusion_curves(snapshot: &Snapshot) -> Result<(ExclusionCurve, ExclusionCurve), QualityError> {
    let tallies = |phase| snapshot.profiles().values().map(move |p| p.phase_counts(phase)).collect::<Vec<_>>();
    let alpha = ExclusionCurve::from_counts(Phase::Assessment, &tallies(Phase::Assessment))?;
    let beta = ExclusionCurve::from_counts(Phase::Acquisition, &tallies(Phase::Acquisition))?;
    Ok((alpha, beta))
}

/// The `x` minimising `|f_alpha(x) - f_beta(x)|`, smallest `x` on ties.
///
/// Compared exactly: with population sizes `n` and `m`, the gap at `x` is
/// `|a_x m - b_x n| / (n m)` and the denominator is shared by every `x`.
pub fn optimal_threshold(alpha: &ExclusionCurve, beta: &ExclusionCurve) -> u32 {
    let (n, m) = (i64::from(alpha.population_size), i64::from(beta.population_size));
    (1..=THRESHOLD_STEPS)
        .min_by_key(|&x| {
            let a = i64::from(alpha.at_or_above[(x - 1) as usize]);
            let b = i64::from(beta.at_or_above[(x - 1) as usize]);
            ((a * m - b * n).abs(), x)
        })
        .expect("non-empty range")
}

/// Like [`optimal_threshold`], but only over thresholds where the curves
/// are not both saturated (everyone flagged in both phases, or nobody).
/// Falls back to [`optimal_threshold`] when every threshold is saturated.
pub fn informative_threshold(alpha: &ExclusionCurve, beta: &ExclusionCurve) -> u32 {
    let (n, m) = (i64::from(alpha.population_size), i64::from(beta.population_size));
    (1..=THRESHOLD_STEPS)
        .filter_map(|x| {
            let a = i64::from(alpha.at_or_above[(x - 1) as usize]);
            let b = i64::from(beta.at_or_above[(x - 1) as usize]);
            let saturated = (a == n && b == m) || (a == 0 && b == 0);
            (!saturated).then_some(((a * m - b * n).abs(), x))
        })
        .min()
        .map_or_else(|| optimal_threshold(alpha, beta), |(_, x)| x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerRow {
    pub worker_id: String,
    pub mu_assessment: Option<f64>,
    pub mu_acquisition: Option<f64>,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub optimal_x: u32,
    pub threshold: f64,
    pub excluded_workers: BTreeSet<String>,
    /// Acquisition annotations left after exclusion.
    pub retained_annotation_count: usize,
    pub rows: Vec<WorkerRow>,
}

impl FilterDecision {
    pub fn apply(&self, snapshot: &Snapshot) -> Snapshot {
        snapshot.excluding(&self.excluded_workers)
    }

    pub fn retained_workers(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().filter(|r| !r.excluded).map(|r| r.worker_id.as_str())
    }

    /// CSV `worker_id,mu_assessment,mu_acquisition,excluded`; undefined
    /// ratios are left empty.
    pub fn write_report<W: Write>(&self, out: W) -> Result<(), QualityError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["worker_id", "mu_assessment", "mu_acquisition", "excluded"])?;
        let fmt = |mu: Option<f64>| mu.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([r.worker_id.clone(), fmt(r.mu_assessment), fmt(r.mu_acquisition), r.excluded.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Exclude every worker whose ratio is at or above `x/10` in both the
/// assessment and acquisition phases. A phase with fewer than
/// `min_annotations` entries never counts against the worker.
pub fn filter_workers(snapshot: &Snapshot, x: u32, min_annotations: u32) -> Result<FilterDecision, QualityError> {
    if !(1..=THRESHOLD_STEPS).contains(&x) {
        return Err(QualityError::BadThreshold(x));
    }
    let flagged = |c: &SubclassCounts| c.total() >= min_annotations.max(1) && mu_reaches(c, x);
    let mut rows = Vec::new();
    let mut excluded_workers = BTreeSet::new();
    for (id, p) in snapshot.profiles() {
        let (assess, acq) = (p.phase_counts(Phase::Assessment), p.phase_counts(Phase::Acquisition));
        let excluded = flagged(&assess) && flagged(&acq);
        if excluded {
            excluded_workers.insert(id.clone());
        }
        rows.push(WorkerRow {
            worker_id: id.clone(),
            mu_assessment: mu_of(&assess),
            mu_acquisition: mu_of(&acq),
            excluded,
        });
    }
    let retained_annotation_count = snapshot
        .annotations()
        .iter()
        .filter(|a| a.phase == Phase::Acquisition && !excluded_workers.contains(&a.worker_id))
        .count();
    Ok(FilterDecision {
        optimal_x: x,
        threshold: f64::from(x) / f64::from(THRESHOLD_STEPS),
        excluded_workers,
        retained_annotation_count,
        rows,
    })
}

/// Filter at `x`, or at the informative threshold when `x` is `None`. Gives
/// `None` when no optimum exists because a phase has no annotations yet.
pub fn filter_auto(
    snapshot: &Snapshot,
    x: Option<u32>,
    min_annotations: u32,
) -> Result<Option<FilterDecision>, QualityError> {
    let x = match x {
        Some(x) => x,
        None => match exclusion_curves(snapshot) {
            Ok((alpha, beta)) => informative_threshold(&alpha, &beta),
            Err(QualityError::EmptyPopulation(_)) => return Ok(None),
            Err(e) => return Err(e),
        },
    };
    filter_workers(snapshot, x, min_annotations).map(Some)
}

/// Write both curves as CSV `x,f_assessment,f_acquisition`.
pub fn write_curves<W: Write>(alpha: &ExclusionCurve, beta: &ExclusionCurve, out: W) -> Result<(), QualityError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "f_assessment", "f_acquisition"])?;
    for x in 1..=THRESHOLD_STEPS {
        w.write_record([x.to_string(), format!("{:.6}", alpha.value(x)), format!("{:.6}", beta.value(x))])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
