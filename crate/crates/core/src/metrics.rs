//! Weighted F-measure on point sets, keypoint NMSE and PCK, and optimal
//! prediction-to-ground-truth quadruplet assignment.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{quadruplet_centroid, InstanceRecord, KeypointQuadruplet};
use crate::labels::{Affordance, NUM_CLASSES, NUM_KEYPOINTS};
use crate::num::{Scalar, Vec3};
use crate::spatial::KdTree;

/// Metres to the centimetre unit the F-measure constants are expressed in.
const CM_PER_M: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid metrics config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("d_aff of an empty quadruplet list")]
    NoQuadruplets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FMeasureConfig {
    pub beta: f64,
    /// Variance of the foreground dependency kernel, in cm^2.
    pub sigma_sq: f64,
    /// Background attenuation rate per cm of distance to the foreground.
    pub alpha_w: f64,
}

impl Default for FMeasureConfig {
    fn default() -> Self {
        FMeasureConfig { beta: 1.0, sigma_sq: 5.0, alpha_w: 0.5f64.ln() / 5.0 }
    }
}

impl FMeasureConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) || !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(MetricsError::InvalidConfig("beta and sigma_sq must be positive".into()));
        }
        if !self.alpha_w.is_finite() {
            return Err(MetricsError::InvalidConfig("alpha_w must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub fmeasure: FMeasureConfig,
    /// PCK threshold as a fraction of d_aff.
    pub pck_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { fmeasure: FMeasureConfig::default(), pck_threshold: 0.3 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        self.fmeasure.validate()?;
        if !(self.pck_threshold > 0.0 && self.pck_threshold.is_finite()) {
            return Err(MetricsError::InvalidConfig("pck_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted F-measure of the soft mask `scores[:, affordance]` against the
/// binary mask `gt == affordance`, or `None` when the ground truth has no
/// point of that affordance.
///
/// With `E = |G - D|`: on foreground points the error is `min(E, EA)`, `EA`
/// the Gaussian-weighted mean of `E` over all foreground points; on
/// background points it is `E * exp(alpha_w * dist)`, `dist` the distance to
/// the nearest foreground point. Distances are in cm.
pub fn weighted_fmeasure<T: Scalar>(
    xyz: &[Vec3<T>],
    scores: ArrayView2<T>,
    gt: &[u8],
    affordance: u8,
    cfg: &FMeasureConfig,
) -> Result<Option<f64>, MetricsError> {
    cfg.validate()?;
    let n = gt.len();
    if xyz.len() != n || scores.dim() != (n, NUM_CLASSES) {
        return Err(MetricsError::Shape(format!("{} points, {n} labels, scores {:?}", xyz.len(), scores.dim())));
    }
    if affordance == 0 || affordance as usize >= NUM_CLASSES {
        return Err(MetricsError::InvalidConfig(format!("affordance {affordance} is not in 1..=6")));
    }
    let a = affordance as usize;
    let pos: Vec<Vec3<f64>> = xyz.iter().map(|p| p.cast::<f64>() * CM_PER_M).collect();
    let fg: Vec<usize> = (0..n).filter(|&i| gt[i] == affordance).collect();
    if fg.is_empty() {
        return Ok(None);
    }
    let err: Vec<f64> = (0..n)
        .map(|i| {
            let g = if gt[i] == affordance { 1.0 } else { 0.0 };
            (g - scores[[i, a]].as_f64()).abs()
        })
        .collect();

    let mut fg_err_sum = 0.0;
    for &i in &fg {
        let (mut num, mut den) = (0.0, 0.0);
        for &j in &fg {
            let w = (-pos[i].distance_sq(pos[j]) / (2.0 * cfg.sigma_sq)).exp();
            num += w * err[j];
            den += w;
        }
        fg_err_sum += err[i].min(num / den);
    }
    let fg_pos: Vec<Vec3<f64>> = fg.iter().map(|&i| pos[i]).collect();
    let tree = KdTree::build(&fg_pos);
    let mut bg_err_sum = 0.0;
    for i in (0..n).filter(|&i| gt[i] != affordance) {
        let (_, dist) = tree.nearest(pos[i]).expect("foreground is nonempty");
        bg_err_sum += err[i] * (cfg.alpha_w * dist).exp();
    }
    let count = fg.len() as f64;
    let recall = 1.0 - fg_err_sum / count;
    let tp = count - fg_err_sum;
    let precision = if tp + bg_err_sum > 0.0 { tp / (tp + bg_err_sum) } else { 0.0 };
    let b2 = cfg.beta * cfg.beta;
    if precision + recall <= 0.0 {
        return Ok(Some(0.0));
    }
    Ok(Some((1.0 + b2) * precision * recall / (b2 * precision + recall)))
}

/// Mean distance of keypoints to their quadruplet centroid over all
/// quadruplets and slots.
pub fn d_aff<T: Scalar>(quadruplets: &[KeypointQuadruplet<T>]) -> Result<f64, MetricsError> {
    if quadruplets.is_empty() {
        return Err(MetricsError::NoQuadruplets);
    }
    let total: f64 = quadruplets
        .iter()
        .map(|q| {
            let c = quadruplet_centroid(q);
            q.iter().map(|k| k.distance(c).as_f64()).sum::<f64>() / NUM_KEYPOINTS as f64
        })
        .sum();
    Ok(total / quadruplets.len() as f64)
}

fn slot_errors<T: Scalar>(pred: &KeypointQuadruplet<T>, gt: &KeypointQuadruplet<T>) -> [f64; NUM_KEYPOINTS] {
    std::array::from_fn(|j| pred[j].distance(gt[j]).as_f64())
}

/// Mean over pairs and slots of the keypoint distance divided by `d`;
/// `None` without pairs.
pub fn nmse<T: Scalar>(pairs: &[(KeypointQuadruplet<T>, KeypointQuadruplet<T>)], d: f64) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let total: f64 = pairs.iter().map(|(p, g)| slot_errors(p, g).iter().sum::<f64>()).sum();
    Some(total / (pairs.len() * NUM_KEYPOINTS) as f64 / d)
}

/// Whether every slot error is within `threshold_frac * d`.
pub fn quadruplet_correct<T: Scalar>(
    pred: &KeypointQuadruplet<T>,
    gt: &KeypointQuadruplet<T>,
    d: f64,
    threshold_frac: f64,
) -> bool {
    slot_errors(pred, gt).iter().all(|&e| e <= threshold_frac * d)
}

/// Percentage of ground-truth quadruplets predicted correctly; unmatched
/// ones count as incorrect. `None` without ground truth.
pub fn pck3d<T: Scalar>(
    pairs: &[(KeypointQuadruplet<T>, KeypointQuadruplet<T>)],
    unmatched_gt: usize,
    d: f64,
    threshold_frac: f64,
) -> Option<f64> {
    let total = pairs.len() + unmatched_gt;
    if total == 0 {
        return None;
    }
    let correct = pairs.iter().filter(|(p, g)| quadruplet_correct(p, g, d, threshold_frac)).count();
    Some(100.0 * correct as f64 / total as f64)
}

/// Minimum-cost assignment of rows to columns of a rectangular cost matrix.
/// Returns, per row, its column or `None` (only when rows exceed columns).
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        let by_col = min_cost_assignment(&transposed);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    // shortest augmenting paths with potentials, rows <= cols, 1-based
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    /// `(prediction index, ground-truth index)`.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

/// Optimal one-to-one assignment on quadruplet centroid distance; pairs
/// farther apart than `gate` are split back into the unmatched sets.
pub fn match_quadruplets<T: Scalar>(
    pred: &[KeypointQuadruplet<T>],
    gt: &[KeypointQuadruplet<T>],
    gate: f64,
) -> Matching {
    let pc: Vec<Vec3<f64>> = pred.iter().map(|q| quadruplet_centroid(q).cast()).collect();
    let gc: Vec<Vec3<f64>> = gt.iter().map(|q| quadruplet_centroid(q).cast()).collect();
    let cost: Vec<Vec<f64>> = pc.iter().map(|p| gc.iter().map(|g| p.distance(*g)).collect()).collect();
    let assignment = min_cost_assignment(&cost);
    let mut m = Matching::default();
    let mut gt_used = vec![false; gt.len()];
    for (p, a) in assignment.into_iter().enumerate() {
        match a {
            Some(g) if cost[p][g] <= gate => {
                m.pairs.push((p, g));
                gt_used[g] = true;
            }
            _ => m.unmatched_pred.push(p),
        }
    }
    m.unmatched_gt = (0..gt.len()).filter(|&g| !gt_used[g]).collect();
    m
}

/// Everything needed to score one scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneEvaluation<'a, T> {
    pub xyz: &'a [Vec3<T>],
    pub gt_labels: &'a [u8],
    pub gt_instances: &'a [InstanceRecord<T>],
    /// Predicted per-point class confidences, `N x 7`.
    pub scores: ArrayView2<'a, T>,
    pub predictions: &'a [InstanceRecord<T>],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceMetrics {
    pub affordance: String,
    pub label: u8,
    /// Mean over scenes containing the affordance.
    pub f_measure: Option<f64>,
    pub nmse: Option<f64>,
    pub pck: Option<f64>,
    pub d_aff: Option<f64>,
    /// Ground-truth quadruplets.
    pub c_aff: usize,
    pub c_correct: usize,
    pub matched: usize,
    pub predicted: usize,
    /// All ground-truth keypoints of this affordance coincide.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAverages {
    pub f_measure: Option<f64>,
    pub nmse: Option<f64>,
    pub pck: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenes: usize,
    pub pck_threshold: f64,
    pub per_affordance: Vec<AffordanceMetrics>,
    pub macro_average: MacroAverages,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn quads_of<T: Scalar>(records: &[InstanceRecord<T>], label: u8) -> Vec<KeypointQuadruplet<T>> {
    records.iter().filter(|r| r.affordance == label).map(|r| r.keypoints).collect()
}

/// Dataset-level report: F-measure averaged over scenes, d_aff over all
/// ground-truth quadruplets of an affordance, and matching, NMSE and PCK per
/// scene pooled over the dataset.
pub fn evaluate<T: Scalar>(scenes: &[SceneEvaluation<T>], cfg: &EvalConfig) -> Result<MetricsReport, MetricsError> {
    cfg.validate()?;
    let mut per_affordance = Vec::new();
    for aff in Affordance::FOREGROUND {
        let label = aff.label();
        let mut f_values = Vec::new();
        for s in scenes {
            if let Some(f) = weighted_fmeasure(s.xyz, s.scores, s.gt_labels, label, &cfg.fmeasure)? {
                f_values.push(f);
            }
        }
        let all_gt: Vec<KeypointQuadruplet<T>> = scenes.iter().flat_map(|s| quads_of(s.gt_instances, label)).collect();
        let predicted = scenes.iter().map(|s| quads_of(s.predictions, label).len()).sum();
        let d = d_aff(&all_gt).ok();
        let degenerate = d == Some(0.0);
        let mut row = AffordanceMetrics {
            affordance: aff.name().to_string(),
            label,
            f_measure: mean(f_values.into_iter()),
            nmse: None,
            pck: None,
            d_aff: d,
            c_aff: all_gt.len(),
            c_correct: 0,
            matched: 0,
            predicted,
            degenerate,
        };
        if let Some(d) = d.filter(|&d| d > 0.0) {
            let mut pairs = Vec::new();
            let mut unmatched = 0;
            for s in scenes {
                let p = quads_of(s.predictions, label);
                let g = quads_of(s.gt_instances, label);
                let m = match_quadruplets(&p, &g, d);
                pairs.extend(m.pairs.iter().map(|&(a, b)| (p[a], g[b])));
                unmatched += m.unmatched_gt.len();
            }
            row.matched = pairs.len();
            row.c_correct = pairs.iter().filter(|(p, g)| quadruplet_correct(p, g, d, cfg.pck_threshold)).count();
            row.nmse = nmse(&pairs, d);
            row.pck = pck3d(&pairs, unmatched, d, cfg.pck_threshold);
        }
        per_affordance.push(row);
    }
    let macro_average = MacroAverages {
        f_measure: mean(per_affordance.iter().filter_map(|r| r.f_measure)),
        nmse: mean(per_affordance.iter().filter_map(|r| r.nmse)),
        pck: mean(per_affordance.iter().filter_map(|r| r.pck)),
    };
    Ok(MetricsReport { scenes: scenes.len(), pck_threshold: cfg.pck_threshold, per_affordance, macro_average })
}

impl MetricsReport {
    /// One row per affordance plus a `mean` row; absent values are `NA`.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        let pct = (self.pck_threshold * 10.0).round() / 10.0;
        let mut out = format!("affordance,F,NMSE,PCK@{pct}\n");
        for r in &self.per_affordance {
            out += &format!("{},{},{},{}\n", r.affordance, cell(r.f_measure), cell(r.nmse), cell(r.pck));
        }
        let m = &self.macro_average;
        out += &format!("mean,{},{},{}\n", cell(m.f_measure), cell(m.nmse), cell(m.pck));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_d_aff() {
        let q = [
            Vec3::new(0.0f64, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        assert!((d_aff(&[q]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(d_aff::<f64>(&[]), Err(MetricsError::NoQuadruplets));
        assert_eq!(d_aff(&[[Vec3::new(1.0f64, 2.0, 3.0); 4]]).unwrap(), 0.0);
    }

    #[test]
    fn pck_counts_unmatched_as_wrong() {
        let q = [Vec3::new(0.0f64, 0.0, 0.0); 4];
        assert_eq!(pck3d(&[(q, q)], 1, 1.0, 0.3), Some(50.0));
        assert_eq!(pck3d::<f64>(&[], 0, 1.0, 0.3), None);
    }

    #[test]
    fn nmse_of_unit_displacement_is_one() {
        let g = [Vec3::new(0.0f64, 0.0, 0.0); 4];
        let p = [Vec3::new(0.0f64, 0.0, 0.25); 4];
        assert!((nmse(&[(p, g)], 0.25).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gate_discards_far_pairs() {
        let g = [Vec3::new(0.0f64, 0.0, 0.0); 4];
        let p = [Vec3::new(1.0f64, 0.0, 0.0); 4];
        let m = match_quadruplets(&[p], &[g], 0.1);
        assert!(m.pairs.is_empty());
        assert_eq!((m.unmatched_pred, m.unmatched_gt), (vec![0], vec![0]));
        let near = [Vec3::new(0.001f64, 0.0, 0.0); 4];
        assert_eq!(match_quadruplets(&[near], &[g], 0.1).pairs, vec![(0, 0)]);
    }

    #[test]
    fn assignment_handles_rectangles() {
        let cost = vec![vec![4.0, 1.0, 3.5], vec![2.0, 0.0, 5.0]];
        assert_eq!(min_cost_assignment(&cost), vec![Some(1), Some(0)]);
        let t: Vec<Vec<f64>> = (0..3).map(|c| (0..2).map(|r| cost[r][c]).collect()).collect();
        assert_eq!(min_cost_assignment(&t), vec![Some(1), Some(0), None]);
    }
}
