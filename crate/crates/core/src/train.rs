//! Momentum gradient descent on the multi-task loss over a set of scenes.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::PointCloudFrame;
use crate::io::Tensor;
use crate::labels::{NUM_CLASSES, NUM_KEYPOINTS};
use crate::losses::{
    focal_loss_normalized, keypoint_offset_loss_normalized, LossConfig, LossError, LossReport, OffsetNormalization,
};
use crate::model::{backward, forward, forward_cached, init_params, ModelConfig, ModelError, ModelParams, OFFSET_COLUMNS};
use crate::num::Scalar;
use crate::synth::SceneGroundTruth;

/// Loss above which training is considered divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
const SHUFFLE_SALT: u64 = 0x5bd1_e995_ab0d_3f6b;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged in epoch {epoch} (multi-task loss {loss})")]
    Diverged { epoch: usize, loss: f64, last_good: Vec<Tensor>, history: Vec<LossReport> },
}

/// One scene prepared for training: inputs, labels, target offsets and the
/// per-point, per-slot region mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample<T> {
    pub cloud: PointCloudFrame<T>,
    pub labels: Vec<u8>,
    pub offsets: Array2<T>,
    pub mask: Vec<[bool; NUM_KEYPOINTS]>,
}

impl<T: Scalar> TrainingSample<T> {
    /// Points inside some affordance region.
    pub fn region_points(&self) -> usize {
        self.mask.iter().filter(|m| m.iter().any(|&b| b)).count()
    }
}

/// Targets from ground truth: every instance member gets the offsets from
/// itself to its instance's four keypoints.
pub fn training_sample<T: Scalar>(scene: &SceneGroundTruth<T>) -> TrainingSample<T> {
    let n = scene.cloud.len();
    let mut offsets = Array2::zeros((n, OFFSET_COLUMNS));
    let mut mask = vec![[false; NUM_KEYPOINTS]; n];
    for inst in &scene.instances {
        for &i in &inst.point_indices {
            let x = scene.cloud.xyz[i];
            for (j, kp) in inst.keypoints.iter().enumerate() {
                let d = *kp - x;
                for c in 0..3 {
                    offsets[[i, 3 * j + c]] = d[c];
                }
            }
            mask[i] = [true; NUM_KEYPOINTS];
        }
    }
    TrainingSample { cloud: scene.cloud.clone(), labels: scene.labels.clone(), offsets, mask }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    /// Loss of the initial parameters over the whole set.
    pub initial: LossReport,
    /// Per epoch: point-weighted mean of the batch losses seen during it.
    pub history: Vec<LossReport>,
    /// Loss of the final parameters over the whole set.
    pub final_report: LossReport,
}

struct BatchLoss<T> {
    semantic: T,
    keypoint: T,
    per_class: [T; NUM_CLASSES],
}

fn normalizers<T: Scalar>(samples: &[&TrainingSample<T>], cfg: &LossConfig) -> (T, T) {
    let points: usize = samples.iter().map(|s| s.labels.len()).sum();
    let offset = match cfg.offset_normalization {
        OffsetNormalization::AllPoints => points,
        OffsetNormalization::RegionPoints => samples.iter().map(|s| s.region_points()).sum(),
    };
    (T::of(points.max(1) as f64), T::of(offset.max(1) as f64))
}

/// Loss and, when `grads` is given, accumulated gradients for one batch.
fn batch_step<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&TrainingSample<T>],
    cfg: &LossConfig,
    mut grads: Option<&mut ModelParams<T>>,
) -> Result<BatchLoss<T>, TrainError> {
    let (n_sem, n_kp) = normalizers(batch, cfg);
    let lambda = T::of(cfg.lambda_weight);
    let mut out = BatchLoss { semantic: T::zero(), keypoint: T::zero(), per_class: [T::zero(); NUM_CLASSES] };
    for sample in batch {
        let (pred, cache) = if grads.is_some() {
            let (p, c) = forward_cached(&sample.cloud, params)?;
            (p, Some(c))
        } else {
            (forward(&sample.cloud, params)?, None)
        };
        let focal = focal_loss_normalized(pred.scores.view(), &sample.labels, cfg, n_sem)?;
        let (kp, kp_grad) =
            keypoint_offset_loss_normalized(pred.offsets.view(), sample.offsets.view(), &sample.mask, n_kp)?;
        out.semantic += focal.loss;
        out.keypoint += kp;
        for c in 0..NUM_CLASSES {
            out.per_class[c] += focal.per_class[c];
        }
        if let (Some(g), Some(cache)) = (grads.as_deref_mut(), cache) {
            let d_scores = focal.grad * lambda;
            g.add_scaled(T::one(), &backward(params, &pred, &cache, &d_scores, &kp_grad));
        }
    }
    Ok(out)
}

fn report<T: Scalar>(b: &BatchLoss<T>, cfg: &LossConfig) -> LossReport {
    LossReport::new(b.semantic.as_f64(), b.keypoint.as_f64(), b.per_class.map(|v| v.as_f64()), cfg)
}

/// Loss of `params` over all samples taken as one batch.
pub fn evaluate_loss<T: Scalar>(
    params: &ModelParams<T>,
    samples: &[TrainingSample<T>],
    cfg: &LossConfig,
) -> Result<LossReport, TrainError> {
    let all: Vec<&TrainingSample<T>> = samples.iter().collect();
    Ok(report(&batch_step(params, &all, cfg, None)?, cfg))
}

/// Trains from `init_params(model_cfg, seed)`. `on_epoch` sees the 1-based
/// epoch, the parameters after it and its loss report.
pub fn train<T: Scalar>(
    samples: &[TrainingSample<T>],
    model_cfg: &ModelConfig,
    cfg: &LossConfig,
    seed: u64,
    on_epoch: impl FnMut(usize, &ModelParams<T>, &LossReport),
) -> Result<TrainOutcome<T>, TrainError> {
    let params = init_params(model_cfg, seed)?;
    train_from(samples, params, cfg, seed, on_epoch)
}

pub fn train_from<T: Scalar>(
    samples: &[TrainingSample<T>],
    mut params: ModelParams<T>,
    cfg: &LossConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &ModelParams<T>, &LossReport),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let initial = evaluate_loss(&params, samples, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT);
    let mut velocity = ModelParams::zeros(&params.config);
    let mut history = Vec::with_capacity(cfg.epochs);
    let lr = T::of(cfg.learning_rate);
    let momentum = T::of(cfg.momentum);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        let last_good = params.clone();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 2];
        let mut class_sums = [0.0f64; NUM_CLASSES];
        let mut weights = [0.0f64; 2];
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingSample<T>> = chunk.iter().map(|&i| &samples[i]).collect();
            let mut grads = ModelParams::zeros(&params.config);
            let loss = match batch_step(&params, &batch, cfg, Some(&mut grads)) {
                Err(TrainError::Model(ModelError::NonFinite(_))) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        loss: f64::NAN,
                        last_good: last_good.to_tensors(),
                        history,
                    })
                }
                other => other?,
            };
            let total = loss.keypoint.as_f64() + cfg.lambda_weight * loss.semantic.as_f64();
            if !(total.is_finite() && total <= DIVERGENCE_LIMIT) || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, loss: total, last_good: last_good.to_tensors(), history });
            }
            let (n_sem, n_kp) = normalizers(&batch, cfg);
            let (n_sem, n_kp) = (n_sem.as_f64(), n_kp.as_f64());
            sums[0] += loss.semantic.as_f64() * n_sem;
            sums[1] += loss.keypoint.as_f64() * n_kp;
            for c in 0..NUM_CLASSES {
                class_sums[c] += loss.per_class[c].as_f64() * n_sem;
            }
            weights[0] += n_sem;
            weights[1] += n_kp;
            velocity.scale(momentum);
            velocity.add_scaled(-lr, &grads);
            params.add_scaled(T::one(), &velocity);
        }
        let rep = LossReport::new(sums[0] / weights[0], sums[1] / weights[1], class_sums.map(|v| v / weights[0]), cfg);
        log::debug!("epoch {epoch}: multitask {:.6}", rep.multitask_loss);
        on_epoch(epoch, &params, &rep);
        history.push(rep);
    }
    let final_report = evaluate_loss(&params, samples, cfg)?;
    Ok(TrainOutcome { params, initial, history, final_report })
}
