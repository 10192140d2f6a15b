//! Fleiss' kappa, overall and per stratum of total annotations.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::lexicon::LexiconEntry;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KappaError {
    #[error("no items")]
    NoItems,
    #[error("items need at least two ratings, got {0}")]
    TooFewRaters(u32),
    #[error("item {item} has {got} ratings, expected {expected}")]
    UnequalRaters { item: usize, expected: u32, got: u32 },
    #[error("item {item} has {got} categories, expected {expected}")]
    RaggedCategories { item: usize, expected: usize, got: usize },
    #[error("chance agreement is 1 while observed agreement is not")]
    UndefinedDivision,
}

/// Fleiss' kappa for items given as per-category rating counts. Every item
/// must carry the same number of ratings `n >= 2`.
pub fn fleiss_kappa<T: AsRef<[u32]>>(items: &[T]) -> Result<f64, KappaError> {
    let first = items.first().ok_or(KappaError::NoItems)?.as_ref();
    let categories = first.len();
    let n: u32 = first.iter().sum();
    if n < 2 {
        return Err(KappaError::TooFewRaters(n));
    }
    let mut totals = vec![0u64; categories];
    let mut agreement_sum = 0.0;
    for (i, item) in items.iter().enumerate() {
        let item = item.as_ref();
        if item.len() != categories {
            return Err(KappaError::RaggedCategories { item: i, expected: categories, got: item.len() });
        }
        let got: u32 = item.iter().sum();
        if got != n {
            return Err(KappaError::UnequalRaters { item: i, expected: n, got });
        }
        let pairs: u64 = item.iter().map(|&c| u64::from(c) * u64::from(c.saturating_sub(1))).sum();
        agreement_sum += pairs as f64 / (f64::from(n) * f64::from(n - 1));
        for (t, &c) in totals.iter_mut().zip(item) {
            *t += u64::from(c);
        }
    }
    let n_items = items.len() as f64;
    let all_ratings = n_items * f64::from(n);
    let p_bar = agreement_sum / n_items;
    let grand: u64 = totals.iter().sum();
    if totals.contains(&grand) {
        // All ratings in one category.
        return if (p_bar - 1.0).abs() < 1e-12 { Ok(1.0) } else { Err(KappaError::UndefinedDivision) };
    }
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / all_ratings).powi(2)).sum();
    Ok((p_bar - p_e) / (1.0 - p_e))
}

pub const STRATA: std::ops::RangeInclusive<u32> = 2..=6;

/// One row of the per-stratum table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    pub stratum: u32,
    /// Over all eleven subclasses, for entries with exactly `stratum`
    /// annotations.
    pub subclass_k: Option<f64>,
    /// Over the eight emotions, for entries left with exactly `stratum`
    /// emotion annotations once the others are dropped.
    pub emotional_k: Option<f64>,
    pub item_count: usize,
    pub emotional_item_count: usize,
}

/// Emotion-only kappa for entries that started with `original_total`
/// annotations and kept `emotion_total` of them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubStratum {
    pub original_total: u32,
    pub emotion_total: u32,
    pub emotional_k: f64,
    pub item_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KappaTable {
    pub rows: Vec<KappaReport>,
    pub substrata: Vec<SubStratum>,
    pub notices: Vec<String>,
    /// Entries whose total falls outside 2..=6, by total.
    pub outside_strata: BTreeMap<u32, usize>,
}

pub fn kappa_by_stratum(entries: &[LexiconEntry]) -> KappaTable {
    let mut by_total: BTreeMap<u32, Vec<[u32; 11]>> = BTreeMap::new();
    let mut by_emotion_total: BTreeMap<u32, Vec<[u32; 8]>> = BTreeMap::new();
    let mut by_pair: BTreeMap<(u32, u32), Vec<[u32; 8]>> = BTreeMap::new();
    let mut table = KappaTable::default();

    for e in entries {
        by_total.entry(e.total).or_default().push(*e.counts.as_array());
        let emotions = e.counts.emotions();
        let m: u32 = emotions.iter().sum();
        if m >= 2 {
            by_emotion_total.entry(m).or_default().push(emotions);
            by_pair.entry((e.total, m)).or_default().push(emotions);
        }
        if !STRATA.contains(&e.total) {
            *table.outside_strata.entry(e.total).or_default() += 1;
        }
    }

    for n in STRATA {
        let items = by_total.get(&n).map(Vec::as_slice).unwrap_or_default();
        let emotion_items = by_emotion_total.get(&n).map(Vec::as_slice).unwrap_or_default();
        if items.is_empty() && emotion_items.is_empty() {
            table.notices.push(format!("stratum {n}: no entries, omitted"));
            continue;
        }
        // Equal-n holds by construction, so kappa can only fail on empty input.
        table.rows.push(KappaReport {
            stratum: n,
            subclass_k: fleiss_kappa(items).ok(),
            emotional_k: fleiss_kappa(emotion_items).ok(),
            item_count: items.len(),
            emotional_item_count: emotion_items.len(),
        });
    }
    for ((original_total, emotion_total), items) in by_pair {
        if let Ok(k) = fleiss_kappa(&items) {
            table.substrata.push(SubStratum { original_total, emotion_total, emotional_k: k, item_count: items.len() });
        }
    }
    table
}

fn fmt_k(k: Option<f64>) -> String {
    k.map(|v| format!("{v:.3}")).unwrap_or_default()
}

impl KappaTable {
    /// CSV `total_annotations,subclass_k,emotional_k,items`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["total_annotations", "subclass_k", "emotional_k", "items"])?;
        for r in &self.rows {
            w.write_record([
                r.stratum.to_string(),
                fmt_k(r.subclass_k),
                fmt_k(r.emotional_k),
                r.item_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `original_total,emotion_total,emotional_k,items`.
    pub fn write_substrata_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["original_total", "emotion_total", "emotional_k", "items"])?;
        for s in &self.substrata {
            w.write_record([
                s.original_total.to_string(),
                s.emotion_total.to_string(),
                fmt_k(Some(s.emotional_k)),
                s.item_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
