use affkp_core::instance::KeypointQuadruplet;
use affkp_core::labels::NUM_CLASSES;
use affkp_core::metrics::{
    d_aff, evaluate, match_quadruplets, min_cost_assignment, nmse, pck3d, weighted_fmeasure, EvalConfig,
    FMeasureConfig, SceneEvaluation,
};
use affkp_core::synth::{sample_scene, SynthConfig};
use affkp_core::{Scene, Vec3};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type V = Vec3<f64>;

/// Weighted F-measure written out with explicit matrices: a row-normalised
/// Gaussian dependency matrix over foreground points, a brute-force
/// nearest-foreground distance per background point.
fn fmeasure_oracle(xyz_m: &[V], soft: &[f64], gt: &[bool], cfg: &FMeasureConfig) -> Option<f64> {
    let pos: Vec<V> = xyz_m.iter().map(|p| *p * 100.0).collect();
    let fg: Vec<usize> = (0..gt.len()).filter(|&i| gt[i]).collect();
    let bg: Vec<usize> = (0..gt.len()).filter(|&i| !gt[i]).collect();
    if fg.is_empty() {
        return None;
    }
    let e = Array1::from_iter((0..gt.len()).map(|i| ((gt[i] as u8 as f64) - soft[i]).abs()));
    let mut a = Array2::from_shape_fn((fg.len(), fg.len()), |(r, c)| {
        let d2 = (pos[fg[r]] - pos[fg[c]]).norm_sq();
        (-d2 / (2.0 * cfg.sigma_sq)).exp()
    });
    for mut row in a.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let e_fg = Array1::from_iter(fg.iter().map(|&i| e[i]));
    let ea = a.dot(&e_fg);
    let ew_fg: Vec<f64> = (0..fg.len()).map(|k| e_fg[k].min(ea[k])).collect();
    let ew_bg: Vec<f64> = bg
        .iter()
        .map(|&i| {
            let delta = fg.iter().map(|&j| (pos[i] - pos[j]).norm()).fold(f64::INFINITY, f64::min);
            e[i] * (cfg.alpha_w * delta).exp()
        })
        .collect();
    let tpw = fg.len() as f64 - ew_fg.iter().sum::<f64>();
    let fpw: f64 = ew_bg.iter().sum();
    let r = 1.0 - ew_fg.iter().sum::<f64>() / fg.len() as f64;
    let p = if tpw + fpw == 0.0 { 0.0 } else { tpw / (tpw + fpw) };
    let b2 = cfg.beta * cfg.beta;
    if p + r == 0.0 {
        Some(0.0)
    } else {
        Some((1.0 + b2) * p * r / (b2 * p + r))
    }
}

fn scores_for(soft: &[f64], affordance: usize) -> Array2<f64> {
    Array2::from_shape_fn((soft.len(), NUM_CLASSES), |(i, c)| {
        if c == affordance {
            soft[i]
        } else {
            (1.0 - soft[i]) / (NUM_CLASSES - 1) as f64
        }
    })
}

fn grid9() -> Vec<V> {
    (0..9).map(|i| V::new((i % 3) as f64 * 0.01, (i / 3) as f64 * 0.01, 0.5)).collect()
}

#[test]
fn nine_point_misplaced_foreground_matches_oracle() {
    let xyz = grid9();
    let gt_mask = [false, true, true, false, true, true, false, false, false];
    let mut soft: Vec<f64> = gt_mask.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    soft[5] = 0.0;
    soft[6] = 1.0;
    let labels: Vec<u8> = gt_mask.iter().map(|&g| if g { 3 } else { 0 }).collect();
    let cfg = FMeasureConfig::default();
    let got = weighted_fmeasure(&xyz, scores_for(&soft, 3).view(), &labels, 3, &cfg).unwrap().unwrap();
    let want = fmeasure_oracle(&xyz, &soft, &gt_mask, &cfg).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    assert!(got > 0.0 && got < 1.0);
}

#[test]
fn perfect_empty_and_absent_masks() {
    let xyz = grid9();
    let labels = vec![0, 2, 2, 0, 2, 0, 0, 0, 1];
    let cfg = FMeasureConfig::default();
    let exact: Vec<f64> = labels.iter().map(|&l| if l == 2 { 1.0 } else { 0.0 }).collect();
    assert_eq!(weighted_fmeasure(&xyz, scores_for(&exact, 2).view(), &labels, 2, &cfg).unwrap(), Some(1.0));
    let zero = vec![0.0; 9];
    assert_eq!(weighted_fmeasure(&xyz, scores_for(&zero, 2).view(), &labels, 2, &cfg).unwrap(), Some(0.0));
    assert_eq!(weighted_fmeasure(&xyz, scores_for(&zero, 4).view(), &labels, 4, &cfg).unwrap(), None);
}

fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    fn go(r: usize, cost: &[Vec<f64>], used: &mut Vec<bool>, need: usize, acc: f64, best: &mut f64) {
        if need == 0 {
            *best = best.min(acc);
            return;
        }
        if r == cost.len() || cost.len() - r < need {
            return;
        }
        // row r unassigned
        go(r + 1, cost, used, need, acc, best);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                go(r + 1, cost, used, need - 1, acc + cost[r][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, cost, &mut vec![false; cols], rows.min(cols), 0.0, &mut best);
    best
}

fn quad_at(c: V) -> KeypointQuadruplet<f64> {
    [c + V::new(0.01, 0.0, 0.0), c - V::new(0.01, 0.0, 0.0), c + V::new(0.0, 0.02, 0.0), c - V::new(0.0, 0.02, 0.0)]
}

#[test]
fn assignment_matches_enumeration_for_every_size_up_to_five() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for rows in 0..=5 {
        for cols in 0..=5 {
            for _ in 0..40 {
                let cost: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
                let got = min_cost_assignment(&cost);
                assert_eq!(got.len(), rows);
                let mut seen = vec![false; cols];
                let mut total = 0.0;
                for (r, c) in got.iter().enumerate() {
                    if let Some(c) = *c {
                        assert!(!seen[c]);
                        seen[c] = true;
                        total += cost[r][c];
                    }
                }
                assert_eq!(got.iter().flatten().count(), rows.min(cols));
                if rows > 0 && cols > 0 {
                    assert!((total - brute_force_assignment(&cost)).abs() < 1e-12, "{rows}x{cols}");
                }
            }
        }
    }
}

#[test]
fn crossed_pairs_are_uncrossed() {
    let gt = vec![quad_at(V::new(0.0, 0.0, 0.5)), quad_at(V::new(0.1, 0.0, 0.5))];
    let pred = vec![quad_at(V::new(0.095, 0.0, 0.5)), quad_at(V::new(0.004, 0.0, 0.5))];
    let m = match_quadruplets(&pred, &gt, 1.0);
    assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
    let far = vec![quad_at(V::new(10.0, 0.0, 0.5))];
    let m = match_quadruplets(&far, &gt, d_aff(&gt).unwrap());
    assert!(m.pairs.is_empty());
    assert_eq!(m.unmatched_gt, vec![0, 1]);
}

#[test]
fn d_aff_averages_instances() {
    let a = quad_at(V::zero());
    let b: KeypointQuadruplet<f64> = a.map(|k| k * 3.0);
    let (da, db) = (d_aff(&[a]).unwrap(), d_aff(&[b]).unwrap());
    assert!((d_aff(&[a, b]).unwrap() - (da + db) / 2.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn toy_clouds_match_the_brute_force_oracle(seed in any::<u64>(), n in 2usize..=9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xyz: Vec<V> = (0..n).map(|_| V::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.5)).collect();
        let gt_mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let soft: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.0..=1.0) } else { rng.gen_range(0..2) as f64 }).collect();
        let labels: Vec<u8> = gt_mask.iter().map(|&g| if g { 6 } else { rng.gen_range(0..6) }).collect();
        let cfg = FMeasureConfig::default();
        let got = weighted_fmeasure(&xyz, scores_for(&soft, 6).view(), &labels, 6, &cfg).unwrap();
        let want = fmeasure_oracle(&xyz, &soft, &gt_mask, &cfg);
        match (got, want) {
            (Some(g), Some(w)) => {
                prop_assert!((g - w).abs() < 1e-9, "{} vs {}", g, w);
                prop_assert!((0.0..=1.0).contains(&g));
            }
            (None, None) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn fmeasure_ignores_other_labels(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let xyz: Vec<V> = (0..n).map(|_| V::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 0.5)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..7)).collect();
        let scores = Array2::from_shape_fn((n, NUM_CLASSES), |_| rng.gen_range(0.0..1.0));
        let relabelled: Vec<u8> = labels.iter().map(|&l| if l == 2 { 2 } else { [0, 5, 2, 6, 1, 3, 4][l as usize] }).collect();
        let cfg = FMeasureConfig::default();
        let a = weighted_fmeasure(&xyz, scores.view(), &labels, 2, &cfg).unwrap();
        let b = weighted_fmeasure(&xyz, scores.view(), &relabelled, 2, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pck_shrinks_with_the_threshold_and_nmse_is_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(KeypointQuadruplet<f64>, KeypointQuadruplet<f64>)> = (0..8)
            .map(|_| {
                let g = quad_at(V::new(rng.gen_range(-0.2..0.2), 0.0, 0.5));
                let p = g.map(|k| k + V::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), 0.0));
                (p, g)
            })
            .collect();
        let d = 0.03;
        prop_assert!(nmse(&pairs, d).unwrap() >= 0.0);
        let mut last = f64::INFINITY;
        for k in (1..=20).rev() {
            let v = pck3d(&pairs, 2, d, k as f64 * 0.05).unwrap();
            prop_assert!(v <= last);
            last = v;
        }
    }
}

#[test]
fn oracle_predictions_score_perfectly() {
    let scenes: Vec<Scene> = (0..3).map(|s| sample_scene(&SynthConfig::default(), 40 + s).unwrap()).collect();
    let scores: Vec<Array2<f64>> = scenes
        .iter()
        .map(|s| Array2::from_shape_fn((s.labels.len(), NUM_CLASSES), |(i, c)| (s.labels[i] as usize == c) as u8 as f64))
        .collect();
    let evals: Vec<SceneEvaluation<f64>> = scenes
        .iter()
        .zip(&scores)
        .map(|(s, sc)| SceneEvaluation {
            xyz: &s.cloud.xyz,
            gt_labels: &s.labels,
            gt_instances: &s.instances,
            scores: sc.view(),
            predictions: &s.instances,
        })
        .collect();
    let report = evaluate(&evals, &EvalConfig::default()).unwrap();
    for row in &report.per_affordance {
        if row.c_aff > 0 {
            assert_eq!(row.f_measure, Some(1.0));
            assert_eq!(row.nmse, Some(0.0));
            assert_eq!(row.pck, Some(100.0));
            assert_eq!(row.c_correct, row.c_aff);
        }
    }
    let csv = report.to_csv();
    assert!(csv.starts_with("affordance,F,NMSE,PCK@0.3\ngrasp,"));
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
    assert_eq!(csv.lines().count(), 8);
}
