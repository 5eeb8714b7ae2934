use affkp_core::labels::{NUM_CLASSES, NUM_KEYPOINTS};
use affkp_core::losses::{focal_loss, keypoint_offset_loss, multitask_loss, LossConfig};
use affkp_core::model::OFFSET_COLUMNS;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-4;
const FD_REL_TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Probabilities in `[0.05, 0.95]`, clear of the clamp.
fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, NUM_CLASSES), |_| rng.gen_range(0.05..0.95))
}

fn random_cfg(rng: &mut ChaCha8Rng) -> LossConfig {
    let mut cfg = LossConfig { gamma: rng.gen_range(0.0..3.0), ..LossConfig::default() };
    for a in cfg.alpha.iter_mut() {
        *a = rng.gen_range(0.05..1.0);
    }
    cfg
}

#[test]
fn focal_gradient_matches_central_differences() {
    for config in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(config);
        let n = rng.gen_range(1..12);
        let cfg = random_cfg(&mut rng);
        let scores = random_scores(&mut rng, n);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect();
        let grad = focal_loss(scores.view(), &labels, &cfg).unwrap().grad;
        for i in 0..n {
            for c in 0..NUM_CLASSES {
                let mut plus = scores.clone();
                let mut minus = scores.clone();
                plus[[i, c]] += FD_STEP;
                minus[[i, c]] -= FD_STEP;
                let fd = (focal_loss(plus.view(), &labels, &cfg).unwrap().loss
                    - focal_loss(minus.view(), &labels, &cfg).unwrap().loss)
                    / (2.0 * FD_STEP);
                if fd == 0.0 && grad[[i, c]] == 0.0 {
                    continue;
                }
                let e = rel_err(grad[[i, c]], fd);
                assert!(e < FD_REL_TOL, "config {config} point {i} class {c}: {} vs {fd} ({e})", grad[[i, c]]);
            }
        }
    }
}

#[test]
fn offset_gradient_matches_central_differences() {
    for config in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + config);
        let n = rng.gen_range(1..12);
        let gt = Array2::from_shape_fn((n, OFFSET_COLUMNS), |_| rng.gen_range(-0.2..0.2));
        // residuals at least 10 steps away from the kink
        let pred = Array2::from_shape_fn((n, OFFSET_COLUMNS), |(i, c)| {
            let r: f64 = rng.gen_range(0.001..0.1);
            gt[[i, c]] + if rng.gen_bool(0.5) { r } else { -r }
        });
        let mask: Vec<[bool; NUM_KEYPOINTS]> = (0..n).map(|_| [(); NUM_KEYPOINTS].map(|_| rng.gen_bool(0.7))).collect();
        let (_, grad) = keypoint_offset_loss(pred.view(), gt.view(), &mask).unwrap();
        for i in 0..n {
            for c in 0..OFFSET_COLUMNS {
                let mut plus = pred.clone();
                let mut minus = pred.clone();
                plus[[i, c]] += FD_STEP;
                minus[[i, c]] -= FD_STEP;
                let fd = (keypoint_offset_loss(plus.view(), gt.view(), &mask).unwrap().0
                    - keypoint_offset_loss(minus.view(), gt.view(), &mask).unwrap().0)
                    / (2.0 * FD_STEP);
                if !mask[i][c / 3] {
                    assert_eq!(grad[[i, c]], 0.0);
                    assert!(fd.abs() < 1e-12);
                    continue;
                }
                let e = rel_err(grad[[i, c]], fd);
                assert!(e < FD_REL_TOL, "config {config} point {i} column {c}: {} vs {fd}", grad[[i, c]]);
            }
        }
    }
}

/// Mean negative log-likelihood of the true class.
fn cross_entropy(scores: &Array2<f64>, labels: &[u8]) -> f64 {
    let total: f64 = labels.iter().enumerate().map(|(i, &l)| -scores[[i, l as usize]].ln()).sum();
    total / labels.len() as f64
}

#[test]
fn unfocused_unweighted_focal_loss_is_cross_entropy() {
    let cfg = LossConfig { gamma: 0.0, alpha: [1.0; NUM_CLASSES], ..LossConfig::default() };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..40);
        let mut scores = random_scores(&mut rng, n);
        for mut row in scores.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect();
        let got = focal_loss(scores.view(), &labels, &cfg).unwrap().loss;
        let want = cross_entropy(&scores, &labels);
        assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn confident_predictions_cost_nothing() {
    let labels = vec![0, 3, 6, 2];
    let scores = Array2::from_shape_fn((4, NUM_CLASSES), |(i, c)| (labels[i] as usize == c) as u8 as f64);
    assert_eq!(focal_loss(scores.view(), &labels, &LossConfig::default()).unwrap().loss, 0.0);
}

#[test]
fn background_only_offset_loss_is_zero() {
    let pred = Array2::from_elem((5, OFFSET_COLUMNS), 3.0);
    let gt = Array2::zeros((5, OFFSET_COLUMNS));
    let (loss, grad) = keypoint_offset_loss(pred.view(), gt.view(), &[[false; NUM_KEYPOINTS]; 5]).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn zero_weight_returns_the_keypoint_loss() {
    let cfg = LossConfig { lambda_weight: 0.0, ..LossConfig::default() };
    assert_eq!(multitask_loss(0.37, 0.5, &cfg), 0.5);
    assert!((multitask_loss(0.01, 0.5, &LossConfig::default()) - 1.5).abs() < 1e-12);
}

proptest! {
    #[test]
    fn losses_ignore_point_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..30);
        let cfg = random_cfg(&mut rng);
        let scores = random_scores(&mut rng, n);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect();
        let pred = Array2::from_shape_fn((n, OFFSET_COLUMNS), |_| rng.gen_range(-0.1..0.1));
        let gt = Array2::from_shape_fn((n, OFFSET_COLUMNS), |_| rng.gen_range(-0.1..0.1));
        let mask: Vec<[bool; NUM_KEYPOINTS]> = (0..n).map(|_| [rng.gen_bool(0.5); NUM_KEYPOINTS]).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let rows = |a: &Array2<f64>| Array2::from_shape_fn(a.dim(), |(i, c)| a[[perm[i], c]]);
        let p_labels: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        let p_mask: Vec<_> = perm.iter().map(|&i| mask[i]).collect();
        let a = focal_loss(scores.view(), &labels, &cfg).unwrap().loss;
        let b = focal_loss(rows(&scores).view(), &p_labels, &cfg).unwrap().loss;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let a = keypoint_offset_loss(pred.view(), gt.view(), &mask).unwrap().0;
        let b = keypoint_offset_loss(rows(&pred).view(), rows(&gt).view(), &p_mask).unwrap().0;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn multitask_loss_is_linear_in_the_semantic_term(sem in 0.0..10.0f64, kp in 0.0..10.0f64, t in 0.0..10.0f64) {
        let cfg = LossConfig::default();
        let base = multitask_loss(sem, kp, &cfg) - kp;
        let scaled = multitask_loss(t * sem, kp, &cfg) - kp;
        prop_assert!((scaled - t * base).abs() <= 1e-12 * scaled.abs().max(1.0));
    }
}
