use std::collections::{BTreeMap, BTreeSet};

use chrono::{TimeZone, Utc};
use pel_core::corpus::{group_by_stem, stem, validate_terms, Dictionary, Term, TermGroup};
use pel_core::evalkit::{intensifier_report, render_summary, EvaluationRecord, EvaluatorKind, Judgment, Level};
use pel_core::lexicon::{aggregate, DyadTable, LexiconEntry};
use pel_core::model::{Annotation, Phase, Snapshot};
use pel_core::quality::{exclusion_curves, filter_workers, informative_threshold, optimal_threshold, ExclusionCurve};
use pel_core::reliability::fleiss_kappa;
use pel_core::{Subclass, SubclassCounts};
use proptest::prelude::*;

fn subclass() -> impl Strategy<Value = Subclass> {
    (0usize..11).prop_map(|i| Subclass::from_position(i).unwrap())
}

/// Up to 12 workers, each answering a random subset of 8 groups in both
/// phases.
fn population() -> impl Strategy<Value = Vec<Annotation>> {
    let worker = (
        prop::collection::vec(prop::option::of(subclass()), 8),
        prop::collection::vec(prop::option::of(subclass()), 8),
    );
    prop::collection::vec(worker, 1..12).prop_map(|workers| {
        let ts = Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap();
        let mut out = Vec::new();
        for (w, (assess, acq)) in workers.into_iter().enumerate() {
            for (phase, answers) in [(Phase::Assessment, assess), (Phase::Acquisition, acq)] {
                for (g, s) in answers.into_iter().enumerate() {
                    if let Some(subclass) = s {
                        out.push(Annotation {
                            worker_id: format!("w{w:02}"),
                            group_id: format!("g{g}"),
                            subclass,
                            phase,
                            timestamp: ts,
                        });
                    }
                }
            }
        }
        out
    })
}

fn groups() -> Vec<TermGroup> {
    (0..8).map(|g| TermGroup::new(format!("g{g}"), BTreeSet::from([format!("g{g}")]), 1)).collect()
}

fn kappa_items() -> impl Strategy<Value = Vec<Vec<u32>>> {
    (2usize..6, 2u32..7).prop_flat_map(|(categories, raters)| {
        prop::collection::vec(prop::collection::vec(0..categories, raters as usize), 1..20).prop_map(move |items| {
            items
                .into_iter()
                .map(|labels| {
                    let mut c = vec![0u32; categories];
                    for l in labels {
                        c[l] += 1;
                    }
                    c
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn kappa_is_bounded_and_permutation_invariant(
        items in kappa_items(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let Ok(k) = fleiss_kappa(&items) else { return Ok(()) };
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k), "{}", k);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..items[0].len()).collect();
        perm.shuffle(&mut rng);
        let mut shuffled: Vec<Vec<u32>> = items.iter().map(|c| perm.iter().map(|&j| c[j]).collect()).collect();
        shuffled.shuffle(&mut rng);
        let k2 = fleiss_kappa(&shuffled).unwrap();
        prop_assert!((k - k2).abs() < 1e-12);
    }

    #[test]
    fn curves_match_direct_scan(annotations in population()) {
        let snapshot = Snapshot::from_annotations(annotations);
        let Ok((alpha, beta)) = exclusion_curves(&snapshot) else { return Ok(()) };
        for (curve, phase) in [(&alpha, Phase::Assessment), (&beta, Phase::Acquisition)] {
            let mus: Vec<f64> = snapshot
                .profiles()
                .values()
                .filter_map(|p| {
                    let c = p.phase_counts(phase);
                    (c.total() > 0).then(|| f64::from(c.max()) / f64::from(c.total()))
                })
                .collect();
            for x in 1..=10u32 {
                let below = mus.iter().filter(|&&m| m < f64::from(x) / 10.0).count();
                let f = 1.0 - below as f64 / mus.len() as f64;
                prop_assert!((curve.value(x) - f).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&curve.value(x)));
            }
            prop_assert!(curve.values().windows(2).all(|w| w[0] >= w[1]));
        }
        let best = optimal_threshold(&alpha, &beta);
        let gap = |c1: &ExclusionCurve, c2: &ExclusionCurve, x: u32| (c1.value(x) - c2.value(x)).abs();
        let min = (1..=10).map(|x| gap(&alpha, &beta, x)).fold(f64::INFINITY, f64::min);
        prop_assert!(gap(&alpha, &beta, best) <= min + 1e-12);

        let saturated = |x: u32| {
            let (a, b) = (alpha.value(x), beta.value(x));
            (a == 1.0 && b == 1.0) || (a == 0.0 && b == 0.0)
        };
        let informative = informative_threshold(&alpha, &beta);
        match (1..=10).filter(|&x| !saturated(x)).map(|x| gap(&alpha, &beta, x)).reduce(f64::min) {
            Some(min) => {
                prop_assert!(!saturated(informative));
                prop_assert!(gap(&alpha, &beta, informative) <= min + 1e-12);
            }
            None => prop_assert_eq!(informative, best),
        }
    }

    #[test]
    fn exclusion_shrinks_with_threshold(annotations in population(), min in 0u32..6) {
        let snapshot = Snapshot::from_annotations(annotations);
        let sets: Vec<BTreeSet<String>> =
            (1..=10).map(|x| filter_workers(&snapshot, x, min).unwrap().excluded_workers).collect();
        for w in sets.windows(2) {
            prop_assert!(w[0].is_superset(&w[1]));
        }
    }

    #[test]
    fn exclusion_never_raises_counts(annotations in population(), x in 1u32..=10) {
        let snapshot = Snapshot::from_annotations(annotations);
        let groups = groups();
        let dyads = DyadTable::default();
        let before = aggregate(&snapshot, &groups, &dyads).unwrap();
        let decision = filter_workers(&snapshot, x, 0).unwrap();
        let after = aggregate(&decision.apply(&snapshot), &groups, &dyads).unwrap();
        let before: BTreeMap<&str, &LexiconEntry> = before.entries.iter().map(|e| (e.group_id.as_str(), e)).collect();
        for e in &after.entries {
            let b = before[e.group_id.as_str()];
            for s in Subclass::ALL {
                prop_assert!(e.counts.get(s) <= b.counts.get(s));
            }
        }
        let total: u32 = after.entries.iter().map(|e| e.total).sum();
        prop_assert_eq!(total as usize, decision.retained_annotation_count);
        for r in &decision.rows {
            prop_assert_eq!(r.excluded, decision.excluded_workers.contains(&r.worker_id));
        }
    }

    #[test]
    fn grouping_is_sound(words in prop::collection::btree_set("[a-z]{1,12}", 1..60)) {
        let terms: Vec<Term> = words.iter().map(|w| Term { surface: w.clone(), frequency: 1, valid: true }).collect();
        let groups = group_by_stem(&terms);
        let mut seen = BTreeSet::new();
        for g in &groups {
            prop_assert!(!g.terms.is_empty());
            for t in &g.terms {
                prop_assert_eq!(stem(t), g.stem.clone());
                prop_assert!(seen.insert(t.clone()));
            }
        }
        prop_assert_eq!(seen, words);
        let ids: BTreeSet<&str> = groups.iter().map(|g| g.id.as_str()).collect();
        prop_assert_eq!(ids.len(), groups.len());
    }

    #[test]
    fn validation_partitions(words in prop::collection::vec("[a-c]{1,3}", 0..40)) {
        let dict = Dictionary::from_words(["a", "ab", "abc", "ba", "c"]).unwrap();
        let terms: Vec<Term> = words.iter().map(|w| Term { surface: w.clone(), frequency: 2, valid: false }).collect();
        let (valid, invalid) = validate_terms(terms.clone(), &dict);
        prop_assert_eq!(valid.len() + invalid.len(), terms.len());
        prop_assert!(valid.iter().all(|t| t.valid && dict.contains(&t.surface)));
        prop_assert!(invalid.iter().all(|t| !t.valid && !dict.contains(&t.surface)));
    }

    #[test]
    fn summary_percentages_sum_to_hundred(counts in prop::collection::vec(0u32..40, 11)) {
        let counts = SubclassCounts::new(counts.try_into().unwrap());
        prop_assume!(counts.total() > 0);
        let entry = LexiconEntry::from_counts("g".into(), "g".into(), BTreeSet::from(["g".to_string()]), counts, &DyadTable::default()).unwrap();
        let summary = render_summary(&entry);
        let sum: f64 = summary
            .split([',', ' '])
            .filter_map(|tok| tok.strip_suffix('%'))
            .map(|p| p.parse::<f64>().unwrap())
            .sum();
        prop_assert!((sum - 100.0).abs() <= 0.02 + 1e-9, "{} -> {}", summary, sum);
    }

    #[test]
    fn intensifier_levels_are_monotone(
        expert in prop::collection::vec(prop::collection::vec(any::<bool>(), 2), 0..15),
        crowd in prop::collection::vec(prop::collection::vec(any::<bool>(), 4), 0..15),
    ) {
        let mut records = Vec::new();
        for (kind, groups) in [(EvaluatorKind::Expert, &expert), (EvaluatorKind::Crowd, &crowd)] {
            for (g, votes) in groups.iter().enumerate() {
                for (e, &v) in votes.iter().enumerate() {
                    records.push(EvaluationRecord::new(format!("g{g}"), format!("{kind:?}{e}"), kind, Judgment::IntensifierValid(v)).unwrap());
                }
            }
        }
        let report = intensifier_report(&records).unwrap();
        for kind in [EvaluatorKind::Expert, EvaluatorKind::Crowd] {
            let levels: Vec<f64> = [Level::Low, Level::Mid, Level::High].iter().filter_map(|&l| report.fraction(kind, l)).collect();
            prop_assert!(levels.windows(2).all(|w| w[0] >= w[1]), "{:?}", levels);
        }
    }
}
