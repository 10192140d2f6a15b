//! Corpus preprocessing: post ingestion, tokenization, dictionary
//! validation, stemming, grouping by stem and the Zipf diagnostic.

pub mod porter;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use porter::stem;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("input could not be read: {0}")]
    Io(#[from] io::Error),
    #[error("keyword must not be empty")]
    EmptyKeyword,
    #[error("dictionary is empty")]
    EmptyDictionary,
    #[error("zipf fit needs at least {needed} distinct terms, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("term-group listing: {0}")]
    Csv(#[from] csv::Error),
    #[error("term-group listing row {row}: {message}")]
    Listing { row: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Reddit,
    Twitter,
}

impl Source {
    pub fn engagement_keys(self) -> &'static [&'static str] {
        match self {
            Source::Reddit => &["upvotes"],
            Source::Twitter => &["retweets", "favourites"],
        }
    }
}

/// One crawled social-media post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub source: Source,
    pub id: String,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default)]
    pub engagement: BTreeMap<String, u64>,
}

impl Post {
    fn validate(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("text is empty".into());
        }
        let allowed = self.source.engagement_keys();
        if let Some(key) = self.engagement.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(format!("engagement key `{key}` is not valid for {:?}", self.source));
        }
        Ok(())
    }
}

/// A record that failed to parse; ingestion continued past it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub posts: Vec<Post>,
    pub warnings: Vec<RecordWarning>,
}

/// Read line-delimited JSON post records and keep the ones whose text
/// contains `keyword`, case-insensitively. Blank lines are skipped.
pub fn ingest_posts<R: Read>(input: R, keyword: &str) -> Result<Ingested, CorpusError> {
    let keyword = keyword.trim().to_lowercase();
    if keyword.is_empty() {
        return Err(CorpusError::EmptyKeyword);
    }
    let mut out = Ingested::default();
    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let post = serde_json::from_str::<Post>(&line).map_err(|e| e.to_string()).and_then(|p| p.validate().map(|_| p));
        match post {
            Ok(p) if p.text.to_lowercase().contains(&keyword) => out.posts.push(p),
            Ok(_) => {}
            Err(message) => out.warnings.push(RecordWarning { line: line_no, message }),
        }
    }
    Ok(out)
}

fn is_url(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Split text into lowercase unigrams.
///
/// URLs are dropped, leading `#`/`@` sigils and edge punctuation are
/// stripped, and empty tokens are discarded. Numerals and single letters
/// survive; the dictionary rejects them later.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter(|t| !is_url(t))
        .filter_map(|raw| {
            let token = raw.trim_start_matches(['#', '@']).trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            (!token.is_empty()).then_some(token)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub surface: String,
    pub frequency: u64,
    pub valid: bool,
}

/// Tokenize every post and count surface forms. Terms come back sorted by
/// surface and are marked invalid until checked against a dictionary.
pub fn count_terms<'a, I>(posts: I) -> Vec<Term>
where
    I: IntoIterator<Item = &'a Post>,
{
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for post in posts {
        for token in tokenize(&post.text) {
            *counts.entry(token).or_default() += 1;
        }
    }
    counts.into_iter().map(|(surface, frequency)| Term { surface, frequency, valid: false }).collect()
}

/// A word list used to validate terms. Lookups are case-insensitive.
#[derive(Debug, Clone)]
pub struct Dictionary {
    words: HashSet<String>,
}

impl Dictionary {
    pub fn from_words<I, S>(words: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words: HashSet<String> =
            words.into_iter().map(|w| w.as_ref().trim().to_lowercase()).filter(|w| !w.is_empty()).collect();
        if words.is_empty() {
            return Err(CorpusError::EmptyDictionary);
        }
        Ok(Dictionary { words })
    }

    /// One word per line, UTF-8.
    pub fn from_reader<R: Read>(input: R) -> Result<Self, CorpusError> {
        let lines = BufReader::new(input).lines().collect::<Result<Vec<_>, _>>()?;
        Self::from_words(lines)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::from_reader(File::open(path)?)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Partition terms into `(valid, invalid)`, setting each term's flag.
pub fn validate_terms(terms: Vec<Term>, dictionary: &Dictionary) -> (Vec<Term>, Vec<Term>) {
    terms
        .into_iter()
        .map(|mut t| {
            t.valid = dictionary.contains(&t.surface);
            t
        })
        .partition(|t| t.valid)
}

/// Terms sharing a stem: the unit of annotation. The stem doubles as the
/// group id, so ids are unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermGroup {
    pub id: String,
    pub stem: String,
    pub terms: BTreeSet<String>,
    pub total_frequency: u64,
    pub dictionary_link: String,
}

pub const DEFAULT_DICTIONARY_URL: &str = "https://en.wiktionary.org/wiki/";

impl TermGroup {
    pub fn new(stem: String, terms: BTreeSet<String>, total_frequency: u64) -> Self {
        let first = terms.iter().next().cloned().unwrap_or_else(|| stem.clone());
        TermGroup {
            id: stem.clone(),
            dictionary_link: format!("{DEFAULT_DICTIONARY_URL}{first}"),
            stem,
            terms,
            total_frequency,
        }
    }
}

/// Group validated terms by their Porter stem, ordered by stem.
pub fn group_by_stem(terms: &[Term]) -> Vec<TermGroup> {
    let mut groups: BTreeMap<String, (BTreeSet<String>, u64)> = BTreeMap::new();
    for term in terms {
        let entry = groups.entry(stem(&term.surface)).or_default();
        entry.0.insert(term.surface.clone());
        entry.1 += term.frequency;
    }
    groups.into_iter().map(|(stem, (terms, freq))| TermGroup::new(stem, terms, freq)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupRow {
    group_id: String,
    stem: String,
    terms: String,
    total_frequency: u64,
}

/// Write the term-group listing: `group_id,stem,terms,total_frequency`
/// with terms joined by `;`.
pub fn write_groups_csv<W: Write>(groups: &[TermGroup], out: W) -> Result<(), CorpusError> {
    let mut writer = csv::Writer::from_writer(out);
    for g in groups {
        writer.serialize(GroupRow {
            group_id: g.id.clone(),
            stem: g.stem.clone(),
            terms: g.terms.iter().cloned().collect::<Vec<_>>().join(";"),
            total_frequency: g.total_frequency,
        })?;
    }
    if groups.is_empty() {
        writer.write_record(["group_id", "stem", "terms", "total_frequency"])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_groups_csv<R: Read>(input: R) -> Result<Vec<TermGroup>, CorpusError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut groups = Vec::new();
    for (i, row) in reader.deserialize::<GroupRow>().enumerate() {
        let row = row?;
        let terms: BTreeSet<String> = row.terms.split(';').filter(|t| !t.is_empty()).map(str::to_string).collect();
        if terms.is_empty() {
            return Err(CorpusError::Listing { row: i + 1, message: "group has no terms".into() });
        }
        let mut group = TermGroup::new(row.stem, terms, row.total_frequency);
        group.id = row.group_id;
        groups.push(group);
    }
    Ok(groups)
}

pub const ZIPF_MIN_TERMS: usize = 10;

/// Fit `log(frequency) = c - a * log(rank)` by least squares and return the
/// slope magnitude `a`. Frequencies are ranked in descending order.
pub fn zipf_fit(frequencies: &[f64]) -> Result<f64, CorpusError> {
    if frequencies.len() < ZIPF_MIN_TERMS {
        return Err(CorpusError::InsufficientData { needed: ZIPF_MIN_TERMS, got: frequencies.len() });
    }
    let mut sorted: Vec<f64> = frequencies.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let points: Vec<(f64, f64)> = sorted.iter().enumerate().map(|(i, f)| (((i + 1) as f64).ln(), f.ln())).collect();
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    Ok((sxy / sxx).abs())
}
