//! Dataset checks run by the `validate` command.

use affkp_core::labels::NUM_CLASSES;
use affkp_core::{Scene, Vec3};
use serde::{Deserialize, Serialize};

/// Largest allowed distance from a keypoint to its nearest member point.
pub const KEYPOINT_SURFACE_TOLERANCE: f64 = 0.002;
/// Padding of the member bounding box that must contain the keypoint centroid.
pub const CENTROID_BOX_PADDING: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCheck {
    pub seed: u64,
    pub points: usize,
    pub instances: usize,
    pub problems: Vec<String>,
}

/// Every violated dataset invariant of one scene.
pub fn check_scene(scene: &Scene) -> SceneCheck {
    let mut problems = Vec::new();
    if let Err(e) = scene.cloud.validate() {
        problems.push(format!("cloud: {e}"));
    }
    let n = scene.cloud.len();
    if scene.labels.len() != n {
        problems.push(format!("{} labels for {n} points", scene.labels.len()));
    }
    if let Some((i, l)) = scene.labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
        problems.push(format!("point {i} has label {l}"));
    }
    let mut owner = vec![None; n];
    let mut ids = std::collections::BTreeSet::new();
    for inst in &scene.instances {
        let tag = format!("instance {}", inst.id);
        if !ids.insert(inst.id) {
            problems.push(format!("{tag}: duplicate id"));
        }
        if !(1..NUM_CLASSES as u8).contains(&inst.affordance) {
            problems.push(format!("{tag}: affordance {} is not foreground", inst.affordance));
        }
        if inst.point_indices.is_empty() {
            problems.push(format!("{tag}: no member points"));
            continue;
        }
        if !inst.keypoints.iter().all(|k| k.is_finite()) {
            problems.push(format!("{tag}: non-finite keypoint"));
            continue;
        }
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for &i in &inst.point_indices {
            if i >= n {
                problems.push(format!("{tag}: member {i} out of range"));
                continue;
            }
            if scene.labels.get(i) != Some(&inst.affordance) {
                problems.push(format!("{tag}: member {i} carries label {:?}", scene.labels.get(i)));
            }
            if let Some(other) = owner[i].replace(inst.id) {
                problems.push(format!("{tag}: member {i} also belongs to instance {other}"));
            }
            let p = scene.cloud.xyz[i];
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        for (j, kp) in inst.keypoints.iter().enumerate() {
            let nearest = inst
                .point_indices
                .iter()
                .filter(|&&i| i < n)
                .map(|&i| scene.cloud.xyz[i].distance(*kp))
                .fold(f64::INFINITY, f64::min);
            if nearest > KEYPOINT_SURFACE_TOLERANCE {
                problems.push(format!("{tag}: kp{} is {nearest:.4} m from its region", j + 1));
            }
        }
        let c = inst.centroid();
        let pad = CENTROID_BOX_PADDING;
        let inside = c.x >= lo.x - pad && c.y >= lo.y - pad && c.z >= lo.z - pad
            && c.x <= hi.x + pad && c.y <= hi.y + pad && c.z <= hi.z + pad;
        if !inside {
            problems.push(format!("{tag}: keypoint centroid outside the padded region box"));
        }
    }
    for (i, (&l, o)) in scene.labels.iter().zip(&owner).enumerate() {
        if l != 0 && o.is_none() {
            problems.push(format!("point {i} has label {l} but no instance"));
            break;
        }
    }
    SceneCheck { seed: scene.seed, points: n, instances: scene.instances.len(), problems }
}
