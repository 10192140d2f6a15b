//! Lexicon aggregation, agreement detection, dyad labelling and CSV export.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::TermGroup;
use crate::model::{Phase, Snapshot};
use crate::ontology::{MainClass, Subclass, SubclassCounts};

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("agreement is undefined for an empty tally")]
    EmptyCounts,
    #[error("dyads are defined for two distinct emotions, got {0} and {1}")]
    NotAnEmotionPair(Subclass, Subclass),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("lexicon row {row}: {message}")]
    Row { row: usize, message: String },
}

/// Tie structure of a group's tally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgreementAnalysis {
    /// The eleven counts in non-decreasing order.
    pub sorted: [u32; Subclass::COUNT],
    /// Subclasses holding the maximum count, in index order.
    pub tied_max: Vec<Subclass>,
    pub subclass_agreement: bool,
    pub emotional_agreement: bool,
}

/// Subclass agreement means two or more subclasses share a non-zero
/// maximum; emotional agreement additionally needs every one of them to be
/// an emotion.
pub fn analyze_agreement(counts: &SubclassCounts) -> Result<AgreementAnalysis, LexiconError> {
    if counts.total() == 0 {
        return Err(LexiconError::EmptyCounts);
    }
    let mut sorted = *counts.as_array();
    sorted.sort_unstable();
    let top = sorted[Subclass::COUNT - 1];
    let tied_max: Vec<Subclass> = counts.iter().filter(|&(_, n)| n == top).map(|(s, _)| s).collect();
    let subclass_agreement = tied_max.len() >= 2;
    let emotional_agreement = subclass_agreement && tied_max.iter().all(|s| s.is_emotion());
    Ok(AgreementAnalysis { sorted, tied_max, subclass_agreement, emotional_agreement })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DyadKind {
    Combination,
    Opposition,
}

impl DyadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DyadKind::Combination => "combination",
            DyadKind::Opposition => "opposition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DyadLabel {
    /// Unordered pair, stored lower index first.
    pub pair: (Subclass, Subclass),
    pub kind: DyadKind,
    pub name: Option<String>,
}

/// Opposite emotions on the circumplex.
pub const OPPOSITIONS: [(Subclass, Subclass); 4] = [
    (Subclass::Joy, Subclass::Sadness),
    (Subclass::Fear, Subclass::Anger),
    (Subclass::Surprise, Subclass::Anticipation),
    (Subclass::Trust, Subclass::Disgust),
];

fn ordered(a: Subclass, b: Subclass) -> (Subclass, Subclass) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Names for combination dyads. The four defaults can be extended or
/// overridden from a `first,second,name` CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DyadTable {
    names: BTreeMap<(Subclass, Subclass), String>,
}

impl Default for DyadTable {
    fn default() -> Self {
        let names = [
            (Subclass::Trust, Subclass::Joy, "love"),
            (Subclass::Joy, Subclass::Anticipation, "optimism"),
            (Subclass::Surprise, Subclass::Joy, "delight"),
            (Subclass::Fear, Subclass::Joy, "guilt"),
        ]
        .into_iter()
        .map(|(a, b, n)| (ordered(a, b), n.to_string()))
        .collect();
        DyadTable { names }
    }
}

impl DyadTable {
    pub fn insert(&mut self, a: Subclass, b: Subclass, name: &str) -> Result<(), LexiconError> {
        if a == b || !a.is_emotion() || !b.is_emotion() {
            return Err(LexiconError::NotAnEmotionPair(a, b));
        }
        self.names.insert(ordered(a, b), name.to_string());
        Ok(())
    }

    /// Extend the defaults from a headerless `first,second,name` CSV.
    pub fn extend_from_csv<R: Read>(&mut self, input: R) -> Result<(), LexiconError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |message: String| LexiconError::Row { row: i + 1, message };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", rec.len())));
            }
            let a = Subclass::from_str(&rec[0]).map_err(|e| bad(e.to_string()))?;
            let b = Subclass::from_str(&rec[1]).map_err(|e| bad(e.to_string()))?;
            self.insert(a, b, &rec[2])?;
        }
        Ok(())
    }

    pub fn label(&self, a: Subclass, b: Subclass) -> Result<DyadLabel, LexiconError> {
        if a == b || !a.is_emotion() || !b.is_emotion() {
            return Err(LexiconError::NotAnEmotionPair(a, b));
        }
        let pair = ordered(a, b);
        if OPPOSITIONS.iter().any(|&(x, y)| ordered(x, y) == pair) {
            return Ok(DyadLabel { pair, kind: DyadKind::Opposition, name: None });
        }
        Ok(DyadLabel { pair, kind: DyadKind::Combination, name: self.names.get(&pair).cloned() })
    }
}

/// Label of a group's dominant class, with `Agreement` for tied maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconClass {
    Emotion,
    Intensifying,
    None,
    Agreement,
}

impl LexiconClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LexiconClass::Emotion => "emotion",
            LexiconClass::Intensifying => "intensifying",
            LexiconClass::None => "none",
            LexiconClass::Agreement => "agreement",
        }
    }
}

impl From<MainClass> for LexiconClass {
    fn from(m: MainClass) -> Self {
        match m {
            MainClass::Emotion => LexiconClass::Emotion,
            MainClass::Intensifying => LexiconClass::Intensifying,
            MainClass::None => LexiconClass::None,
        }
    }
}

impl fmt::Display for LexiconClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LexiconEntry {
    pub group_id: String,
    pub stem: String,
    pub terms: BTreeSet<String>,
    pub counts: SubclassCounts,
    pub total: u32,
    pub main_class: LexiconClass,
    pub majority_subclasses: Vec<Subclass>,
    pub agreement: AgreementAnalysis,
    pub dyad: Option<DyadLabel>,
}

impl LexiconEntry {
    pub fn from_counts(
        group_id: String,
        stem: String,
        terms: BTreeSet<String>,
        counts: SubclassCounts,
        dyads: &DyadTable,
    ) -> Result<Self, LexiconError> {
        let agreement = analyze_agreement(&counts)?;
        let main_class = match agreement.tied_max.as_slice() {
            [only] => only.main_class().into(),
            _ => LexiconClass::Agreement,
        };
        let dyad = match agreement.tied_max.as_slice() {
            [a, b] if agreement.emotional_agreement => Some(dyads.label(*a, *b)?),
            _ => None,
        };
        Ok(LexiconEntry {
            group_id,
            stem,
            terms,
            total: counts.total(),
            counts,
            main_class,
            majority_subclasses: agreement.tied_max.clone(),
            agreement,
            dyad,
        })
    }

    pub fn majority_count(&self) -> u32 {
        self.counts.max()
    }

    pub fn intensifying_count(&self) -> u32 {
        self.counts.get(Subclass::Amplifying) + self.counts.get(Subclass::Weakening)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregation {
    pub entries: Vec<LexiconEntry>,
    /// Groups that have no retained acquisition annotations.
    pub omitted_groups: usize,
    /// Annotations that referenced groups missing from the listing.
    pub unknown_group_annotations: usize,
}

/// Tally retained acquisition annotations per group. Annotations of
/// workers flagged as excluded in the snapshot are ignored.
pub fn aggregate(snapshot: &Snapshot, groups: &[TermGroup], dyads: &DyadTable) -> Result<Aggregation, LexiconError> {
    let mut tallies: HashMap<&str, SubclassCounts> = HashMap::new();
    let known: HashMap<&str, &TermGroup> = groups.iter().map(|g| (g.id.as_str(), g)).collect();
    let mut unknown = 0;
    for a in snapshot.annotations() {
        if a.phase != Phase::Acquisition || snapshot.profile(&a.worker_id).is_some_and(|p| p.excluded) {
            continue;
        }
        match known.get(a.group_id.as_str()) {
            Some(g) => tallies.entry(g.id.as_str()).or_default().increment(a.subclass),
            None => unknown += 1,
        }
    }
    let mut entries = Vec::with_capacity(tallies.len());
    for g in groups {
        if let Some(counts) = tallies.get(g.id.as_str()) {
            entries.push(LexiconEntry::from_counts(g.id.clone(), g.stem.clone(), g.terms.clone(), *counts, dyads)?);
        }
    }
    sort_entries(&mut entries);
    Ok(Aggregation { omitted_groups: groups.len() - entries.len(), entries, unknown_group_annotations: unknown })
}

fn sort_entries(entries: &mut [LexiconEntry]) {
    entries.sort_by(|a, b| a.stem.cmp(&b.stem).then_with(|| a.group_id.cmp(&b.group_id)));
}

pub const CSV_HEADER: [&str; 20] = [
    "stem",
    "terms",
    "joy",
    "trust",
    "fear",
    "surprise",
    "sadness",
    "disgust",
    "anger",
    "anticipation",
    "amplifying",
    "weakening",
    "none",
    "total",
    "main_class",
    "majority_subclasses",
    "subclass_agreement",
    "emotional_agreement",
    "dyad_kind",
    "dyad_name",
];

fn join<I: IntoIterator<Item = S>, S: AsRef<str>>(items: I) -> String {
    items.into_iter().map(|s| s.as_ref().to_string()).collect::<Vec<_>>().join(";")
}

/// Write the lexicon ordered by stem. Output depends only on the entries.
pub fn export_csv<W: Write>(entries: &[LexiconEntry], out: W) -> Result<(), LexiconError> {
    let mut sorted: Vec<&LexiconEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.stem.cmp(&b.stem).then_with(|| a.group_id.cmp(&b.group_id)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for e in sorted {
        let mut row = vec![e.stem.clone(), join(&e.terms)];
        row.extend(e.counts.as_array().iter().map(u32::to_string));
        row.push(e.total.to_string());
        row.push(e.main_class.to_string());
        row.push(join(e.majority_subclasses.iter().map(|s| s.as_str())));
        row.push(e.agreement.subclass_agreement.to_string());
        row.push(e.agreement.emotional_agreement.to_string());
        row.push(e.dyad.as_ref().map(|d| d.kind.as_str().to_string()).unwrap_or_default());
        row.push(e.dyad.as_ref().and_then(|d| d.name.clone()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Read a lexicon CSV back. Derived columns are recomputed from the counts
/// (with the given dyad table); the stem doubles as the group id.
pub fn read_csv<R: Read>(input: R, dyads: &DyadTable) -> Result<Vec<LexiconEntry>, LexiconError> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(LexiconError::Row { row: 0, message: "unexpected header".into() });
    }
    let mut entries = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| LexiconError::Row { row: i + 1, message };
        let mut counts = [0u32; Subclass::COUNT];
        for (j, slot) in counts.iter_mut().enumerate() {
            *slot = rec[2 + j].parse().map_err(|e| bad(format!("{}: {e}", CSV_HEADER[2 + j])))?;
        }
        let stem = rec[0].to_string();
        let terms = rec[1].split(';').filter(|t| !t.is_empty()).map(str::to_string).collect();
        let entry = LexiconEntry::from_counts(stem.clone(), stem, terms, SubclassCounts::new(counts), dyads)?;
        let total: u32 = rec[13].parse().map_err(|e| bad(format!("total: {e}")))?;
        if total != entry.total {
            return Err(bad(format!("total {total} does not match counts {}", entry.total)));
        }
        entries.push(entry);
    }
    Ok(entries)
}
