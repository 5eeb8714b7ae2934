//! From per-point labels and offsets to keypoint quadruplets: instance
//! separation, offset voting and mean-shift mode finding.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloudFrame;
use crate::instance::{InstanceRecord, KeypointQuadruplet};
use crate::labels::{NUM_CLASSES, NUM_KEYPOINTS};
use crate::model::OFFSET_COLUMNS;
use crate::num::{Scalar, Vec3};
use crate::spatial::connected_components;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Gaussian,
    Flat,
}

impl Kernel {
    /// Profile at squared normalized distance `u2 = |y - v|^2 / h^2`.
    #[inline]
    fn weight<T: Scalar>(self, u2: T) -> T {
        match self {
            Kernel::Gaussian => (-u2 * T::of(0.5)).exp(),
            Kernel::Flat => {
                if u2 <= T::one() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    /// Same-label points closer than this belong to one instance (meters).
    pub separation: f64,
    pub bandwidth: f64,
    pub kernel: Kernel,
    /// Mean shift stops once a step is shorter than this (meters).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Converged seeds closer than this share a mode.
    pub merge_radius: f64,
    /// Components with fewer points are discarded as noise.
    pub min_instance_points: usize,
    /// Larger vote sets are seeded from an evenly strided subset.
    pub max_seeds: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            separation: 0.03,
            bandwidth: 0.02,
            kernel: Kernel::Gaussian,
            tolerance: 1e-5,
            max_iterations: 200,
            merge_radius: 0.01,
            min_instance_points: 20,
            max_seeds: 500,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        for (name, x) in [
            ("separation", self.separation),
            ("bandwidth", self.bandwidth),
            ("tolerance", self.tolerance),
            ("merge_radius", self.merge_radius),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(ClusterError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.max_iterations == 0 || self.min_instance_points == 0 || self.max_seeds == 0 {
            return Err(ClusterError::InvalidConfig(
                "max_iterations, min_instance_points and max_seeds must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per nonzero label, the connected components of its points under the
/// `separation` ball graph, smallest ones dropped. Ordered by label, then by
/// smallest member index; members ascending.
pub fn separate_instances<T: Scalar>(
    cloud: &PointCloudFrame<T>,
    labels: &[u8],
    cfg: &ClusterConfig,
) -> Vec<(u8, Vec<usize>)> {
    let mut out = Vec::new();
    for label in 1..NUM_CLASSES as u8 {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if idx.is_empty() {
            continue;
        }
        let pts: Vec<Vec3<T>> = idx.iter().map(|&i| cloud.xyz[i]).collect();
        for comp in connected_components(&pts, T::of(cfg.separation)) {
            if comp.len() >= cfg.min_instance_points {
                out.push((label, comp.iter().map(|&c| idx[c]).collect()));
            }
        }
    }
    out
}

/// `votes[j][k] = x_i + of_i^j` for the `k`-th member `i`.
pub fn vote<T: Scalar>(
    cloud: &PointCloudFrame<T>,
    members: &[usize],
    offsets: ArrayView2<T>,
) -> [Vec<Vec3<T>>; NUM_KEYPOINTS] {
    std::array::from_fn(|j| {
        members
            .iter()
            .map(|&i| {
                let x = cloud.xyz[i];
                x + Vec3::new(offsets[[i, 3 * j]], offsets[[i, 3 * j + 1]], offsets[[i, 3 * j + 2]])
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult<T> {
    pub mode: Vec3<T>,
    /// Seeds whose iterates merged into the returned mode.
    pub basin: usize,
    pub seeds: usize,
    /// Some seed stopped at the iteration limit.
    pub hit_iteration_limit: bool,
}

/// One mean-shift update from `y`; `None` when no vote has kernel weight.
fn shift<T: Scalar>(y: Vec3<T>, votes: &[Vec3<T>], kernel: Kernel, inv_h2: T) -> Option<Vec3<T>> {
    let mut num = Vec3::zero();
    let mut den = T::zero();
    for &v in votes {
        let d = v - y;
        let w = kernel.weight(d.norm_sq() * inv_h2);
        if w > T::zero() {
            num += d * w;
            den += w;
        }
    }
    (den > T::zero()).then(|| y + num / den)
}

/// Iterates of mean shift started at `start`, including `start`, up to
/// convergence or the iteration limit.
pub fn mean_shift_path<T: Scalar>(votes: &[Vec3<T>], start: Vec3<T>, cfg: &ClusterConfig) -> Vec<Vec3<T>> {
    let inv_h2 = T::one() / T::of(cfg.bandwidth * cfg.bandwidth);
    let tol = T::of(cfg.tolerance);
    let mut path = vec![start];
    let mut y = start;
    for _ in 0..cfg.max_iterations {
        let Some(next) = shift(y, votes, cfg.kernel, inv_h2) else { break };
        path.push(next);
        let step = next.distance(y);
        y = next;
        if step < tol {
            break;
        }
    }
    path
}

fn converge<T: Scalar>(votes: &[Vec3<T>], start: Vec3<T>, cfg: &ClusterConfig, inv_h2: T) -> (Vec3<T>, bool) {
    let tol = T::of(cfg.tolerance);
    let mut y = start;
    for _ in 0..cfg.max_iterations {
        let Some(next) = shift(y, votes, cfg.kernel, inv_h2) else { return (y, true) };
        let step = next.distance(y);
        y = next;
        if step < tol {
            return (y, true);
        }
    }
    (y, false)
}

/// Densest mode of `votes`: mean shift from every vote (or an evenly strided
/// subset of `max_seeds`), converged seeds merged within `merge_radius`, and
/// the mode reached by the most seeds returned; ties go to the
/// lexicographically smaller mode. Result is independent of vote order.
///
/// Panics on an empty vote set.
pub fn mean_shift<T: Scalar>(votes: &[Vec3<T>], cfg: &ClusterConfig) -> ModeResult<T> {
    assert!(!votes.is_empty(), "mean shift needs at least one vote");
    let mut sorted = votes.to_vec();
    sorted.sort_by(|a, b| a.lex_cmp(b));
    if sorted.len() == 1 {
        return ModeResult { mode: sorted[0], basin: 1, seeds: 1, hit_iteration_limit: false };
    }
    let n = sorted.len();
    let seeds: Vec<Vec3<T>> = if n <= cfg.max_seeds {
        sorted.clone()
    } else {
        (0..cfg.max_seeds).map(|k| sorted[k * n / cfg.max_seeds]).collect()
    };
    let inv_h2 = T::one() / T::of(cfg.bandwidth * cfg.bandwidth);
    let merge = T::of(cfg.merge_radius);
    let mut hit_limit = false;
    // first converged point, summed offsets of later ones from it, count
    let mut modes: Vec<(Vec3<T>, Vec3<T>, usize)> = Vec::new();
    for &s in &seeds {
        let (y, converged) = converge(&sorted, s, cfg, inv_h2);
        hit_limit |= !converged;
        match modes.iter_mut().find(|m| m.0.distance(y) <= merge) {
            Some(m) => {
                m.1 += y - m.0;
                m.2 += 1;
            }
            None => modes.push((y, Vec3::zero(), 1)),
        }
    }
    let (mode, basin) = modes
        .into_iter()
        .map(|(first, offset, count)| (first + offset / T::of(count as f64), count))
        .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.lex_cmp(&b.0)))
        .expect("at least one seed");
    ModeResult { mode, basin, seeds: seeds.len(), hit_iteration_limit: hit_limit }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceInstance<T> {
    pub id: usize,
    pub affordance: u8,
    pub members: Vec<usize>,
    pub votes: [Vec<Vec3<T>>; NUM_KEYPOINTS],
    pub quadruplet: KeypointQuadruplet<T>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> AffordanceInstance<T> {
    /// The `instances.json` record; always carries a `warnings` array.
    pub fn to_record(&self) -> InstanceRecord<T> {
        InstanceRecord {
            id: self.id,
            affordance: self.affordance,
            point_indices: self.members.clone(),
            keypoints: self.quadruplet,
            warnings: Some(self.warnings.clone()),
        }
    }
}

/// Separation, voting and per-slot mean shift. Instances are ordered by
/// label, then by lexicographic member centroid, and numbered in that order.
pub fn extract_quadruplets<T: Scalar>(
    cloud: &PointCloudFrame<T>,
    labels: &[u8],
    offsets: ArrayView2<T>,
    cfg: &ClusterConfig,
) -> Result<Vec<AffordanceInstance<T>>, ClusterError> {
    cfg.validate()?;
    let n = cloud.len();
    if labels.len() != n || offsets.dim() != (n, OFFSET_COLUMNS) {
        return Err(ClusterError::Shape(format!(
            "{n} points, {} labels, offsets {:?}",
            labels.len(),
            offsets.dim()
        )));
    }
    let mut groups: Vec<(u8, Vec3<T>, Vec<usize>)> = separate_instances(cloud, labels, cfg)
        .into_iter()
        .map(|(label, members)| {
            let pts: Vec<Vec3<T>> = members.iter().map(|&i| cloud.xyz[i]).collect();
            let c = Vec3::mean_of(&pts).expect("components are nonempty");
            (label, c, members)
        })
        .collect();
    groups.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.lex_cmp(&b.1)));
    let mut out = Vec::with_capacity(groups.len());
    for (id, (label, _, members)) in groups.into_iter().enumerate() {
        let votes = vote(cloud, &members, offsets);
        let mut warnings = Vec::new();
        let mut quadruplet = [Vec3::zero(); NUM_KEYPOINTS];
        for (j, slot) in votes.iter().enumerate() {
            let r = mean_shift(slot, cfg);
            if r.hit_iteration_limit {
                log::warn!("instance {id} slot {}: mean shift hit the iteration limit", j + 1);
                warnings.push(format!("kp{}: mean shift did not converge in {} iterations", j + 1, cfg.max_iterations));
            }
            quadruplet[j] = r.mode;
        }
        out.push(AffordanceInstance { id, affordance: label, members, votes, quadruplet, warnings });
    }
    Ok(out)
}
