//! Execution frames: an origin and right-handed orthonormal axes read off a
//! keypoint quadruplet by an affordance-specific rule.
//!
//! | affordance     | origin        | first axis     | second axis (orthogonalized) | third     |
//! |----------------|---------------|----------------|------------------------------|-----------|
//! | grasp, pound   | mean of four  | y = kp4 - kp3  | x = kp2 - kp1                | z = x × y |
//! | contain, scoop | mean of four  | y = kp4 - kp3  | z = kp2 - kp1                | x = y × z |
//! | wrap-grasp     | (kp3 + kp4)/2 | y = kp2 - kp1  | x = kp4 - kp3                | z = x × y |
//! | cut            | kp2           | y = kp2 - kp1  | x = kp4 - kp3                | z = x × y |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::KeypointQuadruplet;
use crate::labels::Affordance;
use crate::num::{Mat3, Pose, Scalar, Vec3};

/// Keypoint pairs closer than this (meters) do not define a direction.
pub const MIN_PAIR_SEPARATION: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("label {0} has no execution frame")]
    NotForeground(u8),
    #[error("keypoints kp{0} and kp{1} coincide")]
    Collapsed(usize, usize),
    #[error("direction kp{0}->kp{1} is parallel to the first axis")]
    Parallel(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ExecutionFrame<T> {
    pub origin: Vec3<T>,
    pub x_axis: Vec3<T>,
    pub y_axis: Vec3<T>,
    pub z_axis: Vec3<T>,
}

impl<T: Scalar> ExecutionFrame<T> {
    /// Columns are the x, y, z axes.
    pub fn rotation(&self) -> Mat3<T> {
        Mat3::from_cols(self.x_axis, self.y_axis, self.z_axis)
    }

    /// Frame coordinates to the coordinates the keypoints were given in.
    pub fn pose(&self) -> Pose<T> {
        Pose::new(self.rotation(), self.origin)
    }

    /// Largest deviation from unit norms, zero dot products and `det = +1`.
    pub fn orthonormality_error(&self) -> T {
        let axes = [self.x_axis, self.y_axis, self.z_axis];
        let mut worst = (self.rotation().determinant() - T::one()).abs();
        for (i, a) in axes.iter().enumerate() {
            worst = worst.max((a.norm() - T::one()).abs());
            for b in &axes[i + 1..] {
                worst = worst.max(a.dot(*b).abs());
            }
        }
        worst
    }
}

/// `kp_b - kp_a` (1-based), rejected when the pair collapses.
fn direction<T: Scalar>(q: &KeypointQuadruplet<T>, a: usize, b: usize) -> Result<Vec3<T>, FrameError> {
    let d = q[b - 1] - q[a - 1];
    if d.norm() <= T::of(MIN_PAIR_SEPARATION) {
        return Err(FrameError::Collapsed(a, b));
    }
    Ok(d)
}

fn unit<T: Scalar>(q: &KeypointQuadruplet<T>, a: usize, b: usize) -> Result<Vec3<T>, FrameError> {
    direction(q, a, b)?.normalized().ok_or(FrameError::Collapsed(a, b))
}

/// `kp_b - kp_a` with its component along `first` removed, normalized.
fn orthogonalized<T: Scalar>(
    q: &KeypointQuadruplet<T>,
    a: usize,
    b: usize,
    first: Vec3<T>,
) -> Result<Vec3<T>, FrameError> {
    let d = direction(q, a, b)?;
    let r = d.reject_from(first);
    if r.norm() <= T::of(MIN_PAIR_SEPARATION) {
        return Err(FrameError::Parallel(a, b));
    }
    r.normalized().ok_or(FrameError::Parallel(a, b))
}

fn mean<T: Scalar>(q: &KeypointQuadruplet<T>) -> Vec3<T> {
    (q[0] + q[1] + q[2] + q[3]) / T::of(4.0)
}

pub fn frame_from_quadruplet<T: Scalar>(
    q: &KeypointQuadruplet<T>,
    affordance: u8,
) -> Result<ExecutionFrame<T>, FrameError> {
    use Affordance::*;
    let aff = Affordance::from_label(affordance).filter(|a| a.is_foreground());
    let Some(aff) = aff else { return Err(FrameError::NotForeground(affordance)) };
    let frame = match aff {
        Grasp | Pound => {
            let y = unit(q, 3, 4)?;
            let x = orthogonalized(q, 1, 2, y)?;
            ExecutionFrame { origin: mean(q), x_axis: x, y_axis: y, z_axis: x.cross(y) }
        }
        Contain | Scoop => {
            let y = unit(q, 3, 4)?;
            let z = orthogonalized(q, 1, 2, y)?;
            ExecutionFrame { origin: mean(q), x_axis: y.cross(z), y_axis: y, z_axis: z }
        }
        WrapGrasp => {
            let y = unit(q, 1, 2)?;
            let x = orthogonalized(q, 3, 4, y)?;
            ExecutionFrame { origin: (q[2] + q[3]) / T::of(2.0), x_axis: x, y_axis: y, z_axis: x.cross(y) }
        }
        Cut => {
            let y = unit(q, 1, 2)?;
            let x = orthogonalized(q, 3, 4, y)?;
            ExecutionFrame { origin: q[1], x_axis: x, y_axis: y, z_axis: x.cross(y) }
        }
        Background => unreachable!("filtered above"),
    };
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grasp_example() {
        let q = [
            Vec3::new(0.0f64, 0.0, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.05, -0.02, 0.0),
            Vec3::new(0.05, 0.02, 0.0),
        ];
        let f = frame_from_quadruplet(&q, Affordance::Grasp.label()).unwrap();
        assert!(f.origin.distance(Vec3::new(0.05, 0.0, 0.0)) < 1e-15);
        assert_eq!((f.x_axis, f.y_axis, f.z_axis), (Vec3::unit_x(), Vec3::unit_y(), Vec3::unit_z()));
    }

    #[test]
    fn collapsed_pair_is_named() {
        let mut q = [Vec3::new(0.0f64, 0.0, 0.0), Vec3::unit_x(), Vec3::unit_y(), Vec3::unit_z()];
        q[3] = q[2];
        assert_eq!(frame_from_quadruplet(&q, 4), Err(FrameError::Collapsed(3, 4)));
        assert_eq!(frame_from_quadruplet(&q, 0), Err(FrameError::NotForeground(0)));
        let parallel = [Vec3::new(0.0f64, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0), Vec3::zero(), Vec3::unit_y()];
        assert_eq!(frame_from_quadruplet(&parallel, 1), Err(FrameError::Parallel(1, 2)));
    }
}
