use std::collections::BTreeSet;
use std::time::Instant;

use cswin::eval::{
    auroc, average_precision, evaluate_case, extract_candidates, holm_bonferroni, match_lesions, wilcoxon_signed_rank,
    Candidate, EvalConfig, ExtractConfig, Grid, Metrics, DICE_THRESHOLD,
};
use cswin::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{at_least, blob, coords, dist2, enumerated_ap, enumerated_wilcoxon, pair_count_auroc, DIMS};

#[test]
fn one_blob_gives_one_candidate_at_forty_percent_of_peak() {
    let mut map = vec![0f32; DIMS.iter().product()];
    blob(&mut map, [8.0, 7.0, 8.0], 0.9, 2.5, 100.0);
    let c = extract_candidates(&map, DIMS, &ExtractConfig::default());
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].confidence, 0.9f32 as f64);
    assert_eq!(c[0].voxels, at_least(&map, 0.4 * (0.9f32 as f64), |_| true));
}

#[test]
fn two_blobs_give_two_ordered_disjoint_candidates() {
    let mut map = vec![0f32; DIMS.iter().product()];
    let (a, b) = ([4.0, 4.0, 8.0], [11.0, 11.0, 8.0]);
    blob(&mut map, a, 0.9, 1.5, 4.0);
    blob(&mut map, b, 0.5, 1.5, 4.0);
    let c = extract_candidates(&map, DIMS, &ExtractConfig::default());
    assert_eq!(c.len(), 2);
    assert_eq!((c[0].confidence, c[1].confidence), (0.9f32 as f64, 0.5f32 as f64));
    let near = |p: [f64; 3]| move |i: usize| dist2(coords(i, DIMS), p) <= 16.0;
    assert_eq!(c[0].voxels, at_least(&map, 0.4 * (0.9f32 as f64), near(a)));
    assert_eq!(c[1].voxels, at_least(&map, 0.4 * (0.5f32 as f64), near(b)));
    let s0: BTreeSet<_> = c[0].voxels.iter().collect();
    assert!(c[1].voxels.iter().all(|v| !s0.contains(v)));
}

fn smooth_random(seed: u64, dims: [usize; 3]) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let mut map = vec![0f32; n];
    for _ in 0..6 {
        let c = [0, 1, 2].map(|k| rng.random_range(0.0..dims[k] as f64));
        let peak: f64 = rng.random_range(0.1..1.0);
        let sigma: f64 = rng.random_range(0.8..2.5);
        for (i, v) in map.iter_mut().enumerate() {
            let r2 = dist2(coords(i, dims), c);
            *v = v.max((peak * (-r2 / (2.0 * sigma * sigma)).exp()) as f32);
        }
    }
    map
}

fn local_maxima(map: &[f32], grid: &Grid, min_peak: f64) -> usize {
    (0..map.len())
        .filter(|&i| {
            let mut top = map[i] as f64 >= min_peak;
            grid.neighbours(i, |j| top &= map[j] <= map[i]);
            top
        })
        .count()
}

#[test]
fn candidates_are_disjoint_sorted_and_bounded_by_local_maxima() {
    let cfg = ExtractConfig::default();
    let grid = Grid::new(DIMS, cfg.connectivity);
    for seed in 0..8 {
        let map = smooth_random(seed, DIMS);
        let c = extract_candidates(&map, DIMS, &cfg);
        assert!(!c.is_empty());
        assert!(c.windows(2).all(|w| w[0].confidence >= w[1].confidence));
        let mut seen = BTreeSet::new();
        for cand in &c {
            assert!(cand.voxels.iter().all(|v| seen.insert(*v)), "overlap");
            // Each candidate is one connected component.
            let mask: Vec<bool> = (0..map.len()).map(|i| cand.voxels.binary_search(&i).is_ok()).collect();
            assert_eq!(grid.components(&mask).len(), 1);
        }
        assert!(c.len() <= local_maxima(&map, &grid, cfg.min_peak));
    }
}

#[test]
fn random_64_cube_terminates_quickly() {
    let dims = [64, 64, 64];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let map: Vec<f32> = (0..64 * 64 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
    let start = Instant::now();
    let c = extract_candidates(&map, dims, &ExtractConfig::default());
    let elapsed = start.elapsed();
    assert!(!c.is_empty());
    assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
}

#[test]
fn auroc_matches_pair_counting() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(8..40);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        // Coarse scores so ties occur.
        let scores: Vec<f64> =
            labels.iter().map(|&l| ((rng.random_range(0.0..1.0f64) + if l { 0.3 } else { 0.0 }) * 10.0).round() / 10.0).collect();
        let a = auroc(&labels, &scores).unwrap();
        assert_eq!(a, pair_count_auroc(&labels, &scores), "seed {seed}");
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        assert_eq!(auroc(&labels, &warped).unwrap(), a);
    }
}

#[test]
fn ap_matches_pr_enumeration() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let lesions = rng.random_range(1..8);
        let mut hits = 0;
        let dets: Vec<(f64, bool)> = (0..rng.random_range(0..14))
            .map(|_| {
                let hit = hits < lesions && rng.random_bool(0.5);
                hits += hit as usize;
                ((rng.random_range(0.0..1.0f64) * 8.0).round() / 8.0, hit)
            })
            .collect();
        assert_eq!(average_precision(&dets, lesions).unwrap(), enumerated_ap(&dets, lesions), "seed {seed}");
        let warped: Vec<(f64, bool)> = dets.iter().map(|&(c, h)| (c.powi(3) + 1.0, h)).collect();
        assert_eq!(average_precision(&warped, lesions).unwrap(), average_precision(&dets, lesions).unwrap());
    }
    // Six candidates, four lesions: TP, FP, TP, TP, FP, FP.
    let dets = [(0.9, true), (0.8, false), (0.7, true), (0.6, true), (0.5, false), (0.4, false)];
    let want = 0.25 * 1.0 + 0.25 * (2.0 / 3.0) + 0.25 * (3.0 / 4.0);
    assert!((average_precision(&dets, 4).unwrap() - want).abs() < 1e-15);
    assert_eq!(average_precision(&dets, 4).unwrap(), enumerated_ap(&dets, 4));
}

#[test]
fn wilcoxon_exact_matches_sign_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for n in 5..=12 {
        for _ in 0..4 {
            // Half-integer magnitudes so ties occur.
            let deltas: Vec<f64> =
                (0..n).map(|_| (rng.random_range(-3.0..4.0f64) * 2.0).round() / 2.0).collect();
            if deltas.iter().filter(|&&d| d != 0.0).count() < 5 {
                continue;
            }
            let w = wilcoxon_signed_rank(&deltas).unwrap();
            assert!(w.exact);
            assert_eq!(w.p_value, enumerated_wilcoxon(&deltas), "{deltas:?}");
        }
    }
}

#[test]
fn wilcoxon_normal_approximation_tracks_exact_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let deltas: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..2.0)).collect();
        let w = wilcoxon_signed_rank(&deltas).unwrap();
        assert!(!w.exact);
        assert!((w.p_value - enumerated_wilcoxon(&deltas)).abs() < 0.02);
    }
}

#[test]
fn holm_hand_stepped_example() {
    assert_eq!(holm_bonferroni(&[0.03, 0.001, 0.0026], 0.005), vec![false, true, false]);
}

#[test]
fn greedy_matching_prefers_confident_candidates() {
    let lesion: Vec<usize> = (0..10).collect();
    let cands = vec![
        Candidate { voxels: (0..4).collect(), confidence: 0.4 },
        Candidate { voxels: (0..10).collect(), confidence: 0.9 },
    ];
    let m = match_lesions(&cands, &[lesion], DICE_THRESHOLD);
    assert_eq!(m.candidates[0].confidence, 0.9);
    assert_eq!(m.candidates[0].lesion, Some(0));
    assert_eq!(m.candidates[1].lesion, None);
}

#[test]
fn perfect_detector_scores_one() {
    let dims = [8, 8, 4];
    let n: usize = dims.iter().product();
    let mut records = Vec::new();
    for case in 0..4 {
        let mut mask = vec![0f32; n];
        if case % 2 == 0 {
            for i in [case, case + 1, 40 + case, 100] {
                mask[i] = 1.0;
            }
        }
        let m = Array::new(&dims, mask).unwrap();
        records.push(evaluate_case(&format!("c{case}"), &m, &m, &EvalConfig::default()).unwrap());
    }
    let metrics = Metrics::from_cases(records);
    assert_eq!(metrics.auroc, Some(1.0));
    assert_eq!(metrics.ap, Some(1.0));
    let json = metrics.to_json().unwrap();
    let back: Metrics = serde_json::from_str(&json).unwrap();
    assert_eq!(back, metrics);
}
