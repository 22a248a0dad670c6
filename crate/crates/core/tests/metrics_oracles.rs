use std::path::PathBuf;

use adglab::metrics::{per_class_report, preddet_recall, predcls_recall, rank, MetricsReport, PredClsMode, RankedPrediction};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    predcls_r1: f64,
    predcls_r5: f64,
    preddet_r5: f64,
    preddet_r10: f64,
    per_class_r1: Vec<Option<f64>>,
    mean_r1: f64,
}

#[derive(Deserialize)]
struct Fixture {
    predictions: Vec<RankedPrediction>,
    expected: Expected,
}

fn fixtures() -> Vec<(String, Fixture)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/metrics");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    assert!(!paths.is_empty());
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p.file_name().unwrap().to_string_lossy().into_owned(), serde_json::from_str(&text).unwrap())
        })
        .collect()
}

/// Position of `target` when candidates are compared pairwise: everything
/// scoring higher, or equal with a smaller key, comes first.
fn brute_position<K: Ord + Copy>(cands: &[(f64, K)], target: K) -> usize {
    let (s, _) = *cands.iter().find(|c| c.1 == target).unwrap();
    cands.iter().filter(|&&(t, k)| t > s || (t == s && k < target)).count()
}

fn brute_predcls(preds: &[RankedPrediction], k: usize) -> f64 {
    let (mut hits, mut total) = (0, 0);
    for p in preds {
        let cands: Vec<(f64, usize)> = p.scores.iter().copied().zip(0..).collect();
        for &t in &p.truth {
            total += 1;
            hits += usize::from(brute_position(&cands, t) < k);
        }
    }
    hits as f64 / total as f64
}

fn brute_preddet(preds: &[RankedPrediction], k: usize) -> f64 {
    let (mut hits, mut total) = (0, 0);
    let mut images: Vec<u64> = preds.iter().map(|p| p.image_id).collect();
    images.sort_unstable();
    images.dedup();
    for image in images {
        let members: Vec<&RankedPrediction> = preds.iter().filter(|p| p.image_id == image).collect();
        let cands: Vec<(f64, (u64, usize))> =
            members.iter().flat_map(|p| p.scores.iter().enumerate().map(|(j, &s)| (s, (p.instance_id, j)))).collect();
        for p in &members {
            for &t in &p.truth {
                total += 1;
                hits += usize::from(brute_position(&cands, (p.instance_id, t)) < k);
            }
        }
    }
    hits as f64 / total as f64
}

#[test]
fn shipped_fixtures_match_brute_force_and_hand_values() {
    for (name, f) in fixtures() {
        let p = &f.predictions;
        let k = p[0].scores.len();
        let report = MetricsReport::compute(p, k, PredClsMode::PerPair).unwrap();
        assert_eq!(report.predcls_r1, brute_predcls(p, 1), "{name}");
        assert_eq!(report.predcls_r5, brute_predcls(p, 5), "{name}");
        assert_eq!(report.preddet_r5, brute_preddet(p, 5), "{name}");
        assert_eq!(report.preddet_r10, brute_preddet(p, 10), "{name}");
        let e = &f.expected;
        assert_eq!(report.predcls_r1, e.predcls_r1, "{name}");
        assert_eq!(report.predcls_r5, e.predcls_r5, "{name}");
        assert_eq!(report.preddet_r5, e.preddet_r5, "{name}");
        assert_eq!(report.preddet_r10, e.preddet_r10, "{name}");
        assert_eq!(report.per_class_r1, e.per_class_r1, "{name}");
        assert!((report.mean_r1 - e.mean_r1).abs() < 1e-15, "{name}");
    }
}

#[test]
fn image_with_twelve_triplets_is_capacity_bound() {
    let preds: Vec<RankedPrediction> = (0..12)
        .map(|j| {
            let mut scores = vec![0.0; 4];
            scores[j % 4] = 1.0 - j as f64 * 0.01;
            RankedPrediction::new(j as u64, 7, scores, vec![j % 4])
        })
        .collect();
    assert_eq!(preddet_recall(&preds, 5).unwrap(), 5.0 / 12.0);
    assert_eq!(preddet_recall(&preds, 10).unwrap(), 10.0 / 12.0);
}

#[test]
fn uniform_random_scores_hit_at_one_over_k() {
    let k = 117;
    let trials = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(117);
    let preds: Vec<RankedPrediction> = (0..trials)
        .map(|j| {
            let scores: Vec<f64> = (0..k).map(|_| rng.random()).collect();
            RankedPrediction::new(j, j, scores, vec![rng.random_range(0..k)])
        })
        .collect();
    let r1 = predcls_recall(&preds, 1, PredClsMode::PerPair).unwrap();
    let p = 1.0 / k as f64;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((r1 - p).abs() < 3.0 * sigma, "R@1 {r1} vs {p}");
}

#[test]
fn ten_thousand_random_matrices_are_monotone_and_transform_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    for _ in 0..10_000 {
        let k = rng.random_range(2..8);
        let n = rng.random_range(1..6);
        let preds: Vec<RankedPrediction> = (0..n)
            .map(|j| {
                // coarse scores so ties are frequent
                let scores: Vec<f64> = (0..k).map(|_| (rng.random_range(0..5) as f64) / 4.0).collect();
                let mut truth: Vec<usize> = (0..k).filter(|_| rng.random_bool(0.3)).collect();
                if truth.is_empty() {
                    truth.push(rng.random_range(0..k));
                }
                RankedPrediction::new(j as u64, (j / 2) as u64, scores, truth)
            })
            .collect();
        let transformed: Vec<RankedPrediction> = preds
            .iter()
            .map(|p| {
                let s = p.scores.iter().map(|&v| (3.0 * v).exp() - 7.0).collect();
                RankedPrediction::new(p.instance_id, p.image_id, s, p.truth.clone())
            })
            .collect();
        let mut last = 0.0;
        for kk in 1..=k {
            let r = predcls_recall(&preds, kk, PredClsMode::PerPair).unwrap();
            assert!(r >= last);
            last = r;
            assert_eq!(r, predcls_recall(&transformed, kk, PredClsMode::PerPair).unwrap());
            let d = preddet_recall(&preds, kk).unwrap();
            assert_eq!(d, preddet_recall(&transformed, kk).unwrap());
        }
        assert_eq!(last, 1.0);
        assert!(preddet_recall(&preds, 5).unwrap() <= preddet_recall(&preds, 10).unwrap());
    }
}

proptest! {
    #[test]
    fn permuting_inputs_never_changes_recall(
        rows in prop::collection::vec((prop::collection::vec(0u8..4, 5), 0usize..5, 0u64..3), 1..12),
        seed in any::<u64>(),
    ) {
        let preds: Vec<RankedPrediction> = rows
            .iter()
            .enumerate()
            .map(|(j, (s, t, img))| RankedPrediction::new(j as u64, *img, s.iter().map(|&v| v as f64).collect(), vec![*t]))
            .collect();
        let mut shuffled = preds.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        for k in [1, 5] {
            prop_assert_eq!(predcls_recall(&preds, k, PredClsMode::PerPair).unwrap(), predcls_recall(&shuffled, k, PredClsMode::PerPair).unwrap());
        }
        for k in [5, 10] {
            prop_assert_eq!(preddet_recall(&preds, k).unwrap(), preddet_recall(&shuffled, k).unwrap());
        }
        prop_assert_eq!(per_class_report(&preds, 5).unwrap(), per_class_report(&shuffled, 5).unwrap());
    }

    #[test]
    fn ranking_is_a_permutation_sorted_by_score(scores in prop::collection::vec(-3i8..3, 1..10)) {
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let r = rank(&s);
        let mut sorted = r.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..s.len()).collect::<Vec<_>>());
        for w in r.windows(2) {
            prop_assert!(s[w[0]] > s[w[1]] || (s[w[0]] == s[w[1]] && w[0] < w[1]));
        }
    }
}
