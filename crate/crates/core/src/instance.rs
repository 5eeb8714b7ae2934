//! The per-instance record shared by ground truth and predictions.

use serde::{Deserialize, Serialize};

use crate::labels::NUM_KEYPOINTS;
use crate::num::{Scalar, Vec3};

/// Four ordered keypoints of one affordance instance.
pub type KeypointQuadruplet<T> = [Vec3<T>; NUM_KEYPOINTS];

/// One affordance instance as stored in `instances.json`.
///
/// Ground truth omits `warnings`; prediction dumps always carry it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct InstanceRecord<T> {
    pub id: usize,
    pub affordance: u8,
    pub point_indices: Vec<usize>,
    pub keypoints: KeypointQuadruplet<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warnings: Option<Vec<String>>,
}

impl<T: Scalar> InstanceRecord<T> {
    pub fn centroid(&self) -> Vec3<T> {
        quadruplet_centroid(&self.keypoints)
    }

    pub fn cast<U: Scalar>(&self) -> InstanceRecord<U> {
        InstanceRecord {
            id: self.id,
            affordance: self.affordance,
            point_indices: self.point_indices.clone(),
            keypoints: self.keypoints.map(|k| k.cast()),
            warnings: self.warnings.clone(),
        }
    }
}

pub fn quadruplet_centroid<T: Scalar>(q: &KeypointQuadruplet<T>) -> Vec3<T> {
    q.iter().fold(Vec3::zero(), |acc, &k| acc + k) / T::of(NUM_KEYPOINTS as f64)
}
