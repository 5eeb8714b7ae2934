//! Focal segmentation loss, masked L1 keypoint-offset loss and their
//! weighted sum, each with its analytic gradient.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{NUM_CLASSES, NUM_KEYPOINTS};
use crate::model::OFFSET_COLUMNS;
use crate::num::Scalar;

/// Lower clamp on the true-class probability before the logarithm.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("label {label} at point {point} is outside 0..=6")]
    LabelOutOfRange { point: usize, label: u8 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

/// Which count divides the summed offset loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetNormalization {
    /// Every point in the batch.
    AllPoints,
    /// Only points inside an affordance region.
    RegionPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub gamma: f64,
    pub alpha: [f64; NUM_CLASSES],
    pub lambda_weight: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Scenes per gradient step.
    pub batch_size: usize,
    pub offset_normalization: OffsetNormalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.0,
            alpha: [0.03, 0.12, 0.17, 0.21, 0.17, 0.2, 0.1],
            lambda_weight: 100.0,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 200,
            batch_size: 1,
            offset_normalization: OffsetNormalization::AllPoints,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |m: &str| Err(LossError::InvalidConfig(m.to_string()));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if !self.alpha.iter().all(|a| *a > 0.0 && a.is_finite()) {
            return bad("alpha entries must be positive");
        }
        if !(self.lambda_weight > 0.0 && self.lambda_weight.is_finite()) {
            return bad("lambda_weight must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub semantic_loss: f64,
    pub keypoint_loss: f64,
    pub multitask_loss: f64,
    /// Focal loss contributed by points of each true class (sums to
    /// `semantic_loss`).
    pub per_class: [f64; NUM_CLASSES],
}

impl LossReport {
    pub fn new(semantic: f64, keypoint: f64, per_class: [f64; NUM_CLASSES], cfg: &LossConfig) -> Self {
        LossReport {
            semantic_loss: semantic,
            keypoint_loss: keypoint,
            multitask_loss: multitask_loss(semantic, keypoint, cfg),
            per_class,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalOutput<T> {
    pub loss: T,
    pub per_class: [T; NUM_CLASSES],
    /// Gradient with respect to the `N x 7` probabilities.
    pub grad: Array2<T>,
}

/// Mean over points of `-alpha_l (1 - p)^gamma ln p`, `p` the true-class
/// probability clamped to `[1e-7, 1]`.
pub fn focal_loss<T: Scalar>(scores: ArrayView2<T>, labels: &[u8], cfg: &LossConfig) -> Result<FocalOutput<T>, LossError> {
    let n = labels.len();
    focal_loss_normalized(scores, labels, cfg, T::of(n.max(1) as f64))
}

/// As [`focal_loss`] but divided by `normalizer` instead of the point count.
pub fn focal_loss_normalized<T: Scalar>(
    scores: ArrayView2<T>,
    labels: &[u8],
    cfg: &LossConfig,
    normalizer: T,
) -> Result<FocalOutput<T>, LossError> {
    let n = labels.len();
    if scores.dim() != (n, NUM_CLASSES) {
        return Err(LossError::Shape(format!("scores {:?} for {n} labels", scores.dim())));
    }
    let gamma = T::of(cfg.gamma);
    let floor = T::of(PROB_FLOOR);
    let mut grad = Array2::zeros((n, NUM_CLASSES));
    let mut per_class = [T::zero(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        let c = l as usize;
        if c >= NUM_CLASSES {
            return Err(LossError::LabelOutOfRange { point: i, label: l });
        }
        let alpha = T::of(cfg.alpha[c]);
        let raw = scores[[i, c]];
        let p = raw.max(floor).min(T::one());
        let q = T::one() - p;
        let log_p = p.ln();
        per_class[c] += -alpha * q.powf(gamma) * log_p / normalizer;
        if raw > floor && raw < T::one() {
            // d/dp of -alpha q^gamma ln p
            let focus = if gamma == T::zero() { T::zero() } else { gamma * q.powf(gamma - T::one()) * log_p };
            grad[[i, c]] = alpha * (focus - q.powf(gamma) / p) / normalizer;
        }
    }
    let loss = per_class.iter().fold(T::zero(), |a, &b| a + b);
    Ok(FocalOutput { loss, per_class, grad })
}

/// `(1/N) sum_i sum_j mask[i][j] |of_ij - of*_ij|_1`, `N` the number of rows.
/// The subgradient at an exact zero residual is 0.
pub fn keypoint_offset_loss<T: Scalar>(
    pred: ArrayView2<T>,
    gt: ArrayView2<T>,
    mask: &[[bool; NUM_KEYPOINTS]],
) -> Result<(T, Array2<T>), LossError> {
    keypoint_offset_loss_normalized(pred, gt, mask, T::of(mask.len().max(1) as f64))
}

pub fn keypoint_offset_loss_normalized<T: Scalar>(
    pred: ArrayView2<T>,
    gt: ArrayView2<T>,
    mask: &[[bool; NUM_KEYPOINTS]],
    normalizer: T,
) -> Result<(T, Array2<T>), LossError> {
    let n = mask.len();
    if pred.dim() != (n, OFFSET_COLUMNS) || gt.dim() != (n, OFFSET_COLUMNS) {
        return Err(LossError::Shape(format!(
            "pred {:?} and gt {:?} for {n} mask rows",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut grad = Array2::zeros((n, OFFSET_COLUMNS));
    let mut loss = T::zero();
    for (i, m) in mask.iter().enumerate() {
        for (j, &on) in m.iter().enumerate() {
            if !on {
                continue;
            }
            for c in 3 * j..3 * j + 3 {
                let r = pred[[i, c]] - gt[[i, c]];
                loss += r.abs();
                grad[[i, c]] = if r > T::zero() {
                    T::one()
                } else if r < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                } / normalizer;
            }
        }
    }
    Ok((loss / normalizer, grad))
}

pub fn multitask_loss(semantic: f64, keypoint: f64, cfg: &LossConfig) -> f64 {
    keypoint + cfg.lambda_weight * semantic
}
