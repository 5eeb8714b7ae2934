//! Affordance keypoint pipeline: RGB-D geometry, synthetic scenes, a small
//! per-point segmentation and keypoint-offset network, offset voting with
//! mean shift, evaluation metrics and keypoint-driven task simulation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the common choice.

pub mod frames;
pub mod geometry;
pub mod instance;
pub mod io;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod num;
pub mod spatial;
pub mod synth;
pub mod tasks;
pub mod train;
pub mod vote;

pub use num::{Mat3, Pose, Scalar, Vec3};

pub type Vec3f = Vec3<f32>;
pub type Vec3d = Vec3<f64>;
pub type PointCloud = geometry::PointCloudFrame<f64>;
pub type PointCloudF32 = geometry::PointCloudFrame<f32>;
pub type Scene = synth::SceneGroundTruth<f64>;
pub type SceneF32 = synth::SceneGroundTruth<f32>;
