//! Library results checked against independent brute-force computations.

use pel_core::lexicon::analyze_agreement;
use pel_core::reliability::fleiss_kappa;
use pel_core::{Subclass, SubclassCounts};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every composition of at most `max_total` into 11 non-negative parts.
fn compositions(max_total: u32) -> Vec<[u32; 11]> {
    fn go(i: usize, left: u32, cur: &mut [u32; 11], out: &mut Vec<[u32; 11]>) {
        if i == 11 {
            out.push(*cur);
            return;
        }
        for v in 0..=left {
            cur[i] = v;
            go(i + 1, left - v, cur, out);
        }
        cur[i] = 0;
    }
    let mut out = Vec::new();
    go(0, max_total, &mut [0; 11], &mut out);
    out
}

#[test]
fn agreement_matches_max_scan_on_all_small_vectors() {
    let all = compositions(6);
    assert_eq!(all.len(), 12376);
    assert_eq!(all.iter().filter(|c| c.iter().sum::<u32>() == 6).count(), 8008);
    let nonzero: Vec<_> = all.into_iter().filter(|c| c.iter().sum::<u32>() > 0).collect();
    let mut checked = 0;
    for c in &nonzero {
        let mut max = 0;
        for &v in c {
            if v > max {
                max = v;
            }
        }
        let mut tied = Vec::new();
        for (i, &v) in c.iter().enumerate() {
            if v == max {
                tied.push(i);
            }
        }
        let subclass = tied.len() >= 2;
        let emotional = subclass && tied.iter().all(|&i| i < 8);
        let got = analyze_agreement(&SubclassCounts::new(*c)).unwrap();
        let got_tied: Vec<usize> = got.tied_max.iter().map(|s| s.position()).collect();
        assert_eq!(got_tied, tied, "{c:?}");
        assert_eq!(got.subclass_agreement, subclass, "{c:?}");
        assert_eq!(got.emotional_agreement, emotional, "{c:?}");
        assert!(!got.emotional_agreement || got.subclass_agreement);
        assert!(got.sorted.windows(2).all(|w| w[0] <= w[1]));
        checked += 1;
    }
    assert_eq!(checked, 12375);
    assert!(analyze_agreement(&SubclassCounts::default()).is_err());
}

/// Kappa from raw labels by counting agreeing rater pairs directly.
fn pair_counting_kappa(items: &[Vec<usize>]) -> f64 {
    let n = items[0].len();
    let mut p_bar = 0.0;
    for labels in items {
        let mut agree = 0usize;
        for r in 0..n {
            for s in 0..n {
                if r != s && labels[r] == labels[s] {
                    agree += 1;
                }
            }
        }
        p_bar += agree as f64 / (n * (n - 1)) as f64;
    }
    p_bar /= items.len() as f64;
    let pooled: Vec<usize> = items.iter().flatten().copied().collect();
    let mut same = 0usize;
    for a in &pooled {
        for b in &pooled {
            if a == b {
                same += 1;
            }
        }
    }
    let p_e = same as f64 / (pooled.len() * pooled.len()) as f64;
    (p_bar - p_e) / (1.0 - p_e)
}

fn to_counts(items: &[Vec<usize>], categories: usize) -> Vec<Vec<u32>> {
    items
        .iter()
        .map(|labels| {
            let mut c = vec![0u32; categories];
            for &l in labels {
                c[l] += 1;
            }
            c
        })
        .collect()
}

#[test]
fn kappa_matches_pair_counting_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut compared = 0;
    while compared < 500 {
        let items_n = rng.gen_range(1..=20);
        let raters = rng.gen_range(2..=6);
        let categories = rng.gen_range(2..=11);
        let items: Vec<Vec<usize>> =
            (0..items_n).map(|_| (0..raters).map(|_| rng.gen_range(0..categories)).collect()).collect();
        let distinct = items.iter().flatten().collect::<std::collections::BTreeSet<_>>().len();
        if distinct < 2 {
            continue;
        }
        let k = fleiss_kappa(&to_counts(&items, categories)).unwrap();
        let oracle = pair_counting_kappa(&items);
        assert!((k - oracle).abs() < 1e-9, "{k} vs {oracle} on {items:?}");
        compared += 1;
    }
}

#[test]
fn kappa_near_zero_for_uniform_random_ratings() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let items: Vec<Vec<u32>> = (0..10_000)
        .map(|_| {
            let mut c = vec![0u32; 11];
            for _ in 0..5 {
                c[rng.gen_range(0..11)] += 1;
            }
            c
        })
        .collect();
    let k = fleiss_kappa(&items).unwrap();
    assert!(k.abs() <= 0.05, "{k}");
}

#[test]
fn dominant_label_stratum_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let items: Vec<Vec<usize>> = (0..400)
        .map(|_| {
            let dominant = rng.gen_range(0..11);
            (0..4).map(|_| if rng.gen_bool(0.6) { dominant } else { rng.gen_range(0..11) }).collect()
        })
        .collect();
    let k = fleiss_kappa(&to_counts(&items, 11)).unwrap();
    let oracle = pair_counting_kappa(&items);
    assert!((k - oracle).abs() <= 0.02, "{k} vs {oracle}");
    assert!(k > 0.3, "{k}");
}

#[test]
fn hand_computed_kappa() {
    let k = fleiss_kappa(&[[2, 0, 0], [1, 1, 0]]).unwrap();
    assert!((k + 1.0 / 3.0).abs() < 1e-9);
    assert_eq!(pair_counting_kappa(&[vec![0, 0], vec![0, 1]]), k);
}

#[test]
fn subclass_positions_cover_eleven() {
    let positions: Vec<usize> = Subclass::ALL.iter().map(|s| s.position()).collect();
    assert_eq!(positions, (0..11).collect::<Vec<_>>());
}
