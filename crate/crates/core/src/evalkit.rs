//! Evaluation of the lexicon by experts and crowd: task generation,
//! record handling and the comparison reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexicon::LexiconEntry;
use crate::ontology::Subclass;
use crate::reliability::STRATA;

pub const VALIDITY_PER_STRATUM: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("stratum {stratum} has {available} groups, {needed} needed")]
    InsufficientStratum { stratum: u32, available: usize, needed: usize },
    #[error("wrong number of records for {} group(s): {}", .0.len(), describe(.0))]
    RecordMultiplicity(Vec<MultiplicityIssue>),
    #[error("score {0} is outside 1..=5")]
    ScoreOutOfRange(u8),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("record row {row}: {message}")]
    Row { row: usize, message: String },
}

fn describe(issues: &[MultiplicityIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("{} ({}: {} of {})", i.group_id, i.evaluator_kind.as_str(), i.found, i.expected))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiplicityIssue {
    pub group_id: String,
    pub evaluator_kind: EvaluatorKind,
    pub found: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorKind {
    Expert,
    Crowd,
}

impl EvaluatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EvaluatorKind::Expert => "expert",
            EvaluatorKind::Crowd => "crowd",
        }
    }

    /// Evaluations each group receives from this population.
    pub fn evaluators_per_group(self) -> usize {
        match self {
            EvaluatorKind::Expert => 2,
            EvaluatorKind::Crowd => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationKind {
    #[serde(rename = "validity_1to5")]
    Validity,
    IntensifierCheck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationTask {
    pub group_id: String,
    pub summary: String,
    pub kind: EvaluationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Score(u8),
    IntensifierValid(bool),
}

impl Judgment {
    pub fn kind(self) -> EvaluationKind {
        match self {
            Judgment::Score(_) => EvaluationKind::Validity,
            Judgment::IntensifierValid(_) => EvaluationKind::IntensifierCheck,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub group_id: String,
    pub evaluator_id: String,
    pub evaluator_kind: EvaluatorKind,
    pub judgment: Judgment,
}

impl EvaluationRecord {
    pub fn new(
        group_id: impl Into<String>,
        evaluator_id: impl Into<String>,
        evaluator_kind: EvaluatorKind,
        judgment: Judgment,
    ) -> Result<Self, EvalError> {
        if let Judgment::Score(s) = judgment {
            if !(1..=5).contains(&s) {
                return Err(EvalError::ScoreOutOfRange(s));
            }
        }
        Ok(EvaluationRecord { group_id: group_id.into(), evaluator_id: evaluator_id.into(), evaluator_kind, judgment })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    group_id: String,
    evaluator_id: String,
    evaluator_kind: EvaluatorKind,
    score: Option<u8>,
    intensifier_valid: Option<bool>,
}

/// CSV `group_id,evaluator_id,evaluator_kind,score,intensifier_valid`.
pub fn write_records<W: Write>(records: &[EvaluationRecord], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group_id", "evaluator_id", "evaluator_kind", "score", "intensifier_valid"])?;
    for r in records {
        let (score, valid) = match r.judgment {
            Judgment::Score(s) => (s.to_string(), String::new()),
            Judgment::IntensifierValid(v) => (String::new(), v.to_string()),
        };
        w.write_record([r.group_id.as_str(), r.evaluator_id.as_str(), r.evaluator_kind.as_str(), &score, &valid])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<EvaluationRecord>, EvalError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<RecordRow>().enumerate() {
        let row = row?;
        let judgment = match (row.score, row.intensifier_valid) {
            (Some(s), None) => Judgment::Score(s),
            (None, Some(v)) => Judgment::IntensifierValid(v),
            _ => {
                return Err(EvalError::Row {
                    row: i + 1,
                    message: "exactly one of score or intensifier_valid is required".into(),
                })
            }
        };
        out.push(EvaluationRecord::new(row.group_id, row.evaluator_id, row.evaluator_kind, judgment)?);
    }
    Ok(out)
}

/// `100 * count / total` rounded to two decimals, trailing zeros trimmed
/// but at least one decimal kept.
pub fn format_percentage(count: u32, total: u32) -> String {
    format_hundredths((20_000 * u64::from(count) / u64::from(total)).div_ceil(2))
}

/// Render a percentage given in hundredths of a percent.
pub fn format_hundredths(h: u64) -> String {
    let (whole, frac) = (h / 100, h % 100);
    match frac {
        0 => format!("{whole}.0"),
        f if f % 10 == 0 => format!("{whole}.{}", f / 10),
        f => format!("{whole}.{f:02}"),
    }
}

/// Percentages in hundredths for `counts`, rounded by largest remainder so
/// they always sum to exactly 100.00. Ties in remainder go to the earlier
/// position.
pub fn apportion_hundredths(counts: &[u32]) -> Vec<u64> {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut out: Vec<u64> = counts.iter().map(|&c| 10_000 * u64::from(c) / total).collect();
    let mut left = 10_000 - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(10_000 * u64::from(counts[i]) % total));
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Non-zero subclasses by decreasing count, ties in index order.
pub fn ranked_subclasses(entry: &LexiconEntry) -> Vec<(Subclass, u32)> {
    let mut ranked: Vec<(Subclass, u32)> = entry.counts.iter().filter(|&(_, n)| n > 0).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// The annotation summary shown to evaluators.
pub fn render_summary(entry: &LexiconEntry) -> String {
    let terms = entry.terms.iter().map(String::as_str).collect::<Vec<_>>().join(" ");
    let ranked = ranked_subclasses(entry);
    let shares = apportion_hundredths(&ranked.iter().map(|&(_, n)| n).collect::<Vec<_>>());
    let parts = ranked
        .iter()
        .zip(shares)
        .map(|((s, _), h)| format!("{}% {}", format_hundredths(h), s))
        .collect::<Vec<_>>()
        .join(", ");
    format!("The term group \"{terms}\" received annotations as {parts}.")
}

/// Draw `per_stratum` groups without replacement from each of the totals
/// 2..=6. Output is grouped by stratum; within a stratum, in draw order.
pub fn sample_validity_set(entries: &[LexiconEntry], per_stratum: usize, seed: u64) -> Result<Vec<String>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_stratum * STRATA.count());
    for stratum in STRATA {
        let mut ids: Vec<&str> = entries.iter().filter(|e| e.total == stratum).map(|e| e.group_id.as_str()).collect();
        if ids.len() < per_stratum {
            return Err(EvalError::InsufficientStratum { stratum, available: ids.len(), needed: per_stratum });
        }
        ids.sort_unstable();
        out.extend(ids.choose_multiple(&mut rng, per_stratum).map(|s| s.to_string()));
    }
    Ok(out)
}

/// Every group with at least one amplifying or weakening annotation.
pub fn sample_intensifier_set(entries: &[LexiconEntry]) -> Vec<String> {
    entries.iter().filter(|e| e.intensifying_count() > 0).map(|e| e.group_id.clone()).collect()
}

pub fn make_tasks(entries: &[LexiconEntry], ids: &[String], kind: EvaluationKind) -> Vec<EvaluationTask> {
    let by_id: HashMap<&str, &LexiconEntry> = entries.iter().map(|e| (e.group_id.as_str(), e)).collect();
    ids.iter()
        .filter_map(|id| by_id.get(id.as_str()))
        .map(|e| EvaluationTask { group_id: e.group_id.clone(), summary: render_summary(e), kind })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Facet {
    Count,
    Percent,
    Subclass,
    Agreement,
}

impl Facet {
    pub const ALL: [Facet; 4] = [Facet::Count, Facet::Percent, Facet::Subclass, Facet::Agreement];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Count => "count",
            Facet::Percent => "percent",
            Facet::Subclass => "subclass",
            Facet::Agreement => "agreement",
        }
    }

    pub fn parse(s: &str) -> Option<Facet> {
        Facet::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

/// Facet bucket; numbers sort numerically, subclasses by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Bucket {
    Number(u32),
    Subclass(Subclass),
}

impl Bucket {
    pub fn label(&self) -> String {
        match self {
            Bucket::Number(n) => n.to_string(),
            Bucket::Subclass(s) => s.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FacetRow {
    pub facet: Facet,
    pub bucket: Bucket,
    pub evaluator_kind: EvaluatorKind,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidityReport {
    pub rows: Vec<FacetRow>,
    /// Validity records naming groups absent from the lexicon.
    pub skipped: usize,
}

impl ValidityReport {
    pub fn facet(&self, facet: Facet) -> impl Iterator<Item = &FacetRow> {
        self.rows.iter().filter(move |r| r.facet == facet)
    }

    pub fn mean(&self, facet: Facet, bucket: Bucket, kind: EvaluatorKind) -> Option<f64> {
        self.rows.iter().find(|r| r.facet == facet && r.bucket == bucket && r.evaluator_kind == kind).map(|r| r.mean)
    }

    /// CSV `facet,bucket,evaluator_kind,mean_or_fraction,n`, optionally
    /// restricted to one facet.
    pub fn write_csv<W: Write>(&self, facet: Option<Facet>, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["facet", "bucket", "evaluator_kind", "mean_or_fraction", "n"])?;
        for r in self.rows.iter().filter(|r| facet.is_none_or(|f| f == r.facet)) {
            w.write_record([
                r.facet.as_str().to_string(),
                r.bucket.label(),
                r.evaluator_kind.as_str().to_string(),
                format!("{:.4}", r.mean),
                r.n.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Majority share rounded to a whole percent.
pub fn majority_percent(entry: &LexiconEntry) -> u32 {
    ((100.0 * f64::from(entry.majority_count()) / f64::from(entry.total)).round()) as u32
}

/// Mean validity score by majority count, majority percentage, majority
/// subclass and number of tied subclasses, per evaluator kind. A group with
/// tied maxima contributes to each tied subclass in the subclass facet.
pub fn validity_report(records: &[EvaluationRecord], entries: &[LexiconEntry]) -> ValidityReport {
    let by_id: HashMap<&str, &LexiconEntry> = entries.iter().map(|e| (e.group_id.as_str(), e)).collect();
    let mut sums: BTreeMap<(Facet, Bucket, EvaluatorKind), (f64, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for r in records {
        let Judgment::Score(score) = r.judgment else { continue };
        let Some(e) = by_id.get(r.group_id.as_str()) else {
            skipped += 1;
            continue;
        };
        let mut buckets = vec![
            (Facet::Count, Bucket::Number(e.majority_count())),
            (Facet::Percent, Bucket::Number(majority_percent(e))),
            (Facet::Agreement, Bucket::Number(e.majority_subclasses.len() as u32)),
        ];
        buckets.extend(e.majority_subclasses.iter().map(|&s| (Facet::Subclass, Bucket::Subclass(s))));
        for (facet, bucket) in buckets {
            let slot = sums.entry((facet, bucket, r.evaluator_kind)).or_default();
            slot.0 += f64::from(score);
            slot.1 += 1;
        }
    }
    let rows = sums
        .into_iter()
        .map(|((facet, bucket, evaluator_kind), (sum, n))| FacetRow {
            facet,
            bucket,
            evaluator_kind,
            mean: sum / n as f64,
            n,
        })
        .collect();
    ValidityReport { rows, skipped }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Mid,
    High,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Mid => "mid",
            Level::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AgreementLevel {
    pub population: EvaluatorKind,
    pub level: Level,
    pub required_valid: usize,
}

pub const AGREEMENT_LEVELS: [AgreementLevel; 5] = [
    AgreementLevel { population: EvaluatorKind::Expert, level: Level::Low, required_valid: 1 },
    AgreementLevel { population: EvaluatorKind::Expert, level: Level::High, required_valid: 2 },
    AgreementLevel { population: EvaluatorKind::Crowd, level: Level::Low, required_valid: 2 },
    AgreementLevel { population: EvaluatorKind::Crowd, level: Level::Mid, required_valid: 3 },
    AgreementLevel { population: EvaluatorKind::Crowd, level: Level::High, required_valid: 4 },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: AgreementLevel,
    pub fraction: f64,
    pub groups: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IntensifierReport {
    pub rows: Vec<LevelRow>,
}

impl IntensifierReport {
    pub fn fraction(&self, population: EvaluatorKind, level: Level) -> Option<f64> {
        self.rows.iter().find(|r| r.level.population == population && r.level.level == level).map(|r| r.fraction)
    }

    /// CSV `facet,bucket,evaluator_kind,mean_or_fraction,n` with facet
    /// `intensifier` and the level as bucket.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["facet", "bucket", "evaluator_kind", "mean_or_fraction", "n"])?;
        for r in &self.rows {
            w.write_record([
                "intensifier",
                r.level.level.as_str(),
                r.level.population.as_str(),
                &format!("{:.4}", r.fraction),
                &r.groups.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Share of groups reaching each agreement level on intensifier validity.
/// Every evaluated group needs exactly two expert or four crowd records.
pub fn intensifier_report(records: &[EvaluationRecord]) -> Result<IntensifierReport, EvalError> {
    let mut valid: BTreeMap<(EvaluatorKind, &str), (usize, usize)> = BTreeMap::new();
    for r in records {
        let Judgment::IntensifierValid(v) = r.judgment else { continue };
        let slot = valid.entry((r.evaluator_kind, r.group_id.as_str())).or_default();
        slot.0 += 1;
        slot.1 += usize::from(v);
    }
    let issues: Vec<MultiplicityIssue> = valid
        .iter()
        .filter(|((kind, _), (n, _))| *n != kind.evaluators_per_group())
        .map(|((kind, g), (n, _))| MultiplicityIssue {
            group_id: g.to_string(),
            evaluator_kind: *kind,
            found: *n,
            expected: kind.evaluators_per_group(),
        })
        .collect();
    if !issues.is_empty() {
        return Err(EvalError::RecordMultiplicity(issues));
    }
    let rows = AGREEMENT_LEVELS
        .iter()
        .filter_map(|level| {
            let groups: Vec<usize> =
                valid.iter().filter(|((k, _), _)| *k == level.population).map(|(_, (_, v))| *v).collect();
            (!groups.is_empty()).then(|| LevelRow {
                level: *level,
                fraction: groups.iter().filter(|&&v| v >= level.required_valid).count() as f64 / groups.len() as f64,
                groups: groups.len(),
            })
        })
        .collect();
    Ok(IntensifierReport { rows })
}

/// Evaluator ids that also annotated, for the linkage note in reports.
pub fn annotator_overlap<'a>(records: &'a [EvaluationRecord], annotators: &BTreeSet<String>) -> BTreeSet<&'a str> {
    records.iter().filter(|r| annotators.contains(&r.evaluator_id)).map(|r| r.evaluator_id.as_str()).collect()
}
