//! RGB-D front end: pinhole back-projection, k-NN normal estimation and
//! seeded subsampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{symmetric_eigen3, Scalar, Vec3};
use crate::spatial::KdTree;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("image is {got_w}x{got_h} but intrinsics expect {want_w}x{want_h}")]
    DimensionMismatch { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("depth image has no valid (positive) depth values")]
    EmptyCloud,
    #[error("normal estimation needs N >= k >= 3, got N={n}, k={k}")]
    NotEnoughPoints { n: usize, k: usize },
    #[error("invalid cloud: {0}")]
    InvalidCloud(String),
}

/// Pinhole intrinsics. The JSON form has exactly the fields
/// `fx, fy, cx, cy, width, height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics { fx: 320.0, fy: 320.0, cx: 160.0, cy: 120.0, width: 320, height: 240 }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fx.is_finite()) || !(self.fy > 0.0 && self.fy.is_finite()) {
            return bad("focal lengths must be positive and finite");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be nonzero");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx must lie in [0, width)");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy must lie in [0, height)");
        }
        Ok(())
    }

    /// Camera-frame ray through pixel `(u, v)` with unit depth.
    pub fn ray<T: Scalar>(&self, u: T, v: T) -> Vec3<T> {
        Vec3::new((u - T::of(self.cx)) / T::of(self.fx), (v - T::of(self.cy)) / T::of(self.fy), T::one())
    }

    pub fn backproject_pixel<T: Scalar>(&self, u: T, v: T, z: T) -> Vec3<T> {
        self.ray(u, v) * z
    }

    /// Sub-pixel image coordinates of a camera-frame point with `z > 0`.
    pub fn project<T: Scalar>(&self, p: Vec3<T>) -> (T, T) {
        (
            T::of(self.fx) * p.x / p.z + T::of(self.cx),
            T::of(self.fy) * p.y / p.z + T::of(self.cy),
        )
    }
}

/// Depth in meters (0 = invalid) and unit-interval RGB, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdImage<T> {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<T>,
    pub rgb: Vec<[T; 3]>,
}

impl<T: Scalar> RgbdImage<T> {
    pub fn new(width: usize, height: usize) -> Self {
        RgbdImage {
            width,
            height,
            depth: vec![T::zero(); width * height],
            rgb: vec![[T::zero(); 3]; width * height],
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.width * self.height;
        if self.depth.len() != n || self.rgb.len() != n {
            return Err(GeometryError::InvalidImage(format!(
                "expected {n} pixels, got {} depth / {} rgb",
                self.depth.len(),
                self.rgb.len()
            )));
        }
        if let Some(i) = self.depth.iter().position(|d| !d.is_finite() || *d < T::zero()) {
            return Err(GeometryError::InvalidImage(format!("depth at pixel {i} is negative or non-finite")));
        }
        let unit = |c: &T| *c >= T::zero() && *c <= T::one();
        if let Some(i) = self.rgb.iter().position(|c| !c.iter().all(unit)) {
            return Err(GeometryError::InvalidImage(format!("rgb at pixel {i} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn invalid_depth_count(&self) -> usize {
        self.depth.iter().filter(|d| **d <= T::zero()).count()
    }
}

/// Camera-frame point cloud with colours, unit normals and source pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct PointCloudFrame<T> {
    pub xyz: Vec<Vec3<T>>,
    pub rgb: Vec<Vec3<T>>,
    pub normal: Vec<Vec3<T>>,
    pub pixel_index: Vec<usize>,
}

impl<T: Scalar> PointCloudFrame<T> {
    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    /// Checks the frame invariants: nonempty, aligned, finite, unit normals.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.xyz.len();
        if n == 0 {
            return Err(GeometryError::InvalidCloud("cloud is empty".into()));
        }
        if self.rgb.len() != n || self.normal.len() != n || self.pixel_index.len() != n {
            return Err(GeometryError::InvalidCloud("attribute lengths disagree".into()));
        }
        for i in 0..n {
            if !(self.xyz[i].is_finite() && self.rgb[i].is_finite() && self.normal[i].is_finite()) {
                return Err(GeometryError::InvalidCloud(format!("non-finite value at point {i}")));
            }
            if (self.normal[i].norm() - T::one()).abs() > T::of(1e-6) {
                return Err(GeometryError::InvalidCloud(format!("normal {i} is not unit length")));
            }
        }
        Ok(())
    }

    /// Gathers the listed points, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        PointCloudFrame {
            xyz: indices.iter().map(|&i| self.xyz[i]).collect(),
            rgb: indices.iter().map(|&i| self.rgb[i]).collect(),
            normal: indices.iter().map(|&i| self.normal[i]).collect(),
            pixel_index: indices.iter().map(|&i| self.pixel_index[i]).collect(),
        }
    }

    /// Rounds every attribute to what the on-disk PLY form can hold
    /// (32-bit coordinates and normals, 8-bit colour).
    pub fn quantize_for_storage(&mut self) {
        let q32 = |v: Vec3<T>| v.map(|c| T::of(c.as_f32() as f64));
        let q8 = |v: Vec3<T>| {
            v.map(|c| {
                let byte = (c.as_f64().clamp(0.0, 1.0) * 255.0).round();
                T::of(byte / 255.0)
            })
        };
        for p in &mut self.xyz {
            *p = q32(*p);
        }
        for n in &mut self.normal {
            *n = q32(*n);
        }
        for c in &mut self.rgb {
            *c = q8(*c);
        }
    }

    pub fn cast<U: Scalar>(&self) -> PointCloudFrame<U> {
        PointCloudFrame {
            xyz: self.xyz.iter().map(|p| p.cast()).collect(),
            rgb: self.rgb.iter().map(|p| p.cast()).collect(),
            normal: self.normal.iter().map(|p| p.cast()).collect(),
            pixel_index: self.pixel_index.clone(),
        }
    }
}

/// Inverse pinhole projection of every strictly positive depth pixel.
///
/// Initial normals point from each point back to the camera centre; run
/// [`estimate_normals`] for surface normals.
pub fn backproject<T: Scalar>(
    img: &RgbdImage<T>,
    k: &CameraIntrinsics,
) -> Result<PointCloudFrame<T>, GeometryError> {
    k.validate()?;
    if img.width != k.width || img.height != k.height {
        return Err(GeometryError::DimensionMismatch {
            got_w: img.width,
            got_h: img.height,
            want_w: k.width,
            want_h: k.height,
        });
    }
    img.validate()?;
    let mut cloud = PointCloudFrame { xyz: vec![], rgb: vec![], normal: vec![], pixel_index: vec![] };
    for v in 0..img.height {
        for u in 0..img.width {
            let idx = v * img.width + u;
            let z = img.depth[idx];
            if z <= T::zero() {
                continue;
            }
            let p = k.backproject_pixel(T::of(u as f64), T::of(v as f64), z);
            cloud.xyz.push(p);
            cloud.rgb.push(Vec3::from(img.rgb[idx]));
            cloud.normal.push((-p).normalized().unwrap_or_else(|| -Vec3::unit_z()));
            cloud.pixel_index.push(idx);
        }
    }
    if cloud.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    Ok(cloud)
}

/// Points whose neighbourhood was rank deficient and received the fallback
/// normal `(0, 0, -1)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalReport {
    pub flagged: Vec<usize>,
}

impl NormalReport {
    pub fn flagged_count(&self) -> usize {
        self.flagged.len()
    }
}

pub const DEFAULT_NORMAL_NEIGHBORS: usize = 10;

/// PCA normals over the `k` nearest neighbours (the point itself included),
/// oriented so that `normal · (−point) ≥ 0`.
pub fn estimate_normals<T: Scalar>(
    cloud: &PointCloudFrame<T>,
    k_neighbors: usize,
) -> Result<(PointCloudFrame<T>, NormalReport), GeometryError> {
    let n = cloud.len();
    if k_neighbors < 3 || n < k_neighbors {
        return Err(GeometryError::NotEnoughPoints { n, k: k_neighbors });
    }
    let tree = KdTree::build(&cloud.xyz);
    let mut out = cloud.clone();
    let mut report = NormalReport::default();
    let inv_k = T::one() / T::of(k_neighbors as f64);
    let rank_tol = T::epsilon().sqrt();
    for i in 0..n {
        let nbrs = tree.nearest_k(cloud.xyz[i], k_neighbors);
        let mean = nbrs.iter().fold(Vec3::zero(), |acc, &(j, _)| acc + cloud.xyz[j]) * inv_k;
        let mut cov = [[T::zero(); 3]; 3];
        for &(j, _) in &nbrs {
            let d = cloud.xyz[j] - mean;
            for r in 0..3 {
                for c in 0..3 {
                    cov[r][c] += d[r] * d[c] * inv_k;
                }
            }
        }
        let (vals, vecs) = symmetric_eigen3(cov);
        let degenerate = vals[2] <= T::min_positive_value() || vals[1] <= vals[2] * rank_tol;
        if degenerate {
            out.normal[i] = -Vec3::unit_z();
            report.flagged.push(i);
            continue;
        }
        let mut normal = vecs[0].normalized().unwrap_or_else(|| -Vec3::unit_z());
        if normal.dot(-cloud.xyz[i]) < T::zero() {
            normal = -normal;
        }
        out.normal[i] = normal;
    }
    Ok((out, report))
}

/// Sorted indices of a uniform sample without replacement; identity when the
/// cloud is already small enough.
pub fn subsample_indices(n: usize, target_n: usize, seed: u64) -> Vec<usize> {
    if n <= target_n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, target_n).into_vec();
    idx.sort_unstable();
    idx
}

pub fn subsample<T: Scalar>(cloud: &PointCloudFrame<T>, target_n: usize, seed: u64) -> PointCloudFrame<T> {
    let target_n = target_n.max(1);
    if cloud.len() <= target_n {
        return cloud.clone();
    }
    cloud.select(&subsample_indices(cloud.len(), target_n, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn intrinsics(fx: f64, cx: f64, w: usize) -> CameraIntrinsics {
        CameraIntrinsics { fx, fy: fx, cx, cy: cx, width: w, height: w }
    }

    fn flat_image(w: usize, depth: f64) -> RgbdImage<f64> {
        let mut img = RgbdImage::new(w, w);
        img.depth.iter_mut().for_each(|d| *d = depth);
        img
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let k = intrinsics(100.0, 5.0, 11);
        let mut img = RgbdImage::<f64>::new(11, 11);
        img.depth[5 * 11 + 5] = 0.8;
        let cloud = backproject(&img, &k).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.xyz[0], Vec3::new(0.0, 0.0, 0.8));
        assert_eq!(cloud.pixel_index[0], 60);
    }

    #[test]
    fn unit_tangent_pixel() {
        let k = CameraIntrinsics { fx: 4.0, fy: 4.0, cx: 2.0, cy: 3.0, width: 8, height: 8 };
        let mut img = RgbdImage::<f64>::new(8, 8);
        img.depth[3 * 8 + 6] = 1.0;
        let cloud = backproject(&img, &k).unwrap();
        assert_eq!(cloud.xyz[0], Vec3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn two_by_two_hand_evaluation() {
        let k = CameraIntrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, width: 2, height: 2 };
        let mut img = RgbdImage::<f64>::new(2, 2);
        img.depth = vec![1.0, 1.0, 0.0, 2.0];
        let cloud = backproject(&img, &k).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.xyz[0], Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(cloud.xyz[1], Vec3::new(1.0, 0.0, 1.0));
        assert_eq!(cloud.xyz[2], Vec3::new(2.0, 2.0, 2.0));
        assert_eq!(cloud.pixel_index, vec![0, 1, 3]);
        assert_eq!(img.invalid_depth_count(), 1);
    }

    #[test]
    fn all_invalid_depth_is_an_error() {
        let k = intrinsics(10.0, 1.0, 3);
        let img = RgbdImage::<f64>::new(3, 3);
        assert_eq!(backproject(&img, &k), Err(GeometryError::EmptyCloud));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let k = intrinsics(10.0, 1.0, 3);
        let img = flat_image(4, 1.0);
        assert!(matches!(backproject(&img, &k), Err(GeometryError::DimensionMismatch { .. })));
    }

    #[test]
    fn project_inverts_backproject() {
        let k = CameraIntrinsics { fx: 321.5, fy: 318.25, cx: 159.5, cy: 120.25, width: 320, height: 240 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (u, v) = (rng.gen_range(0..320) as f64, rng.gen_range(0..240) as f64);
            let z = rng.gen_range(0.2..3.0);
            let (pu, pv) = k.project(k.backproject_pixel(u, v, z));
            assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        }
    }

    #[test]
    fn plane_normals_face_camera() {
        let k = intrinsics(20.0, 10.0, 21);
        let cloud = backproject(&flat_image(21, 1.0), &k).unwrap();
        let (with_normals, report) = estimate_normals(&cloud, 10).unwrap();
        assert_eq!(report.flagged_count(), 0);
        for n in &with_normals.normal {
            assert!(n.distance(Vec3::new(0.0, 0.0, -1.0)) < 1e-9);
        }
    }

    #[test]
    fn sphere_normals_point_back_toward_camera() {
        // Visible cap of a unit sphere at (0, 0, 2); analytic normal is the
        // outward radial direction, which faces the camera on the visible side.
        let center = Vec3::new(0.0, 0.0, 2.0);
        let mut xyz = Vec::new();
        let steps = 40;
        for a in 0..steps {
            for b in 0..steps {
                let theta = 0.9 * (a as f64 / steps as f64);
                let phi = 2.0 * std::f64::consts::PI * b as f64 / steps as f64;
                let dir = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), -theta.cos());
                xyz.push(center + dir);
            }
        }
        let n = xyz.len();
        let cloud = PointCloudFrame {
            rgb: vec![Vec3::zero(); n],
            normal: vec![-Vec3::unit_z(); n],
            pixel_index: (0..n).collect(),
            xyz,
        };
        let (out, _) = estimate_normals(&cloud, 10).unwrap();
        let cos5 = 5f64.to_radians().cos();
        for i in 0..n {
            let analytic = (out.xyz[i] - center).normalized().unwrap();
            // skip the outermost ring, whose neighbourhoods are one-sided
            if -analytic.z > 0.8f64.cos() {
                assert!(out.normal[i].dot(analytic) > cos5, "point {i}");
            }
        }
    }

    #[test]
    fn identical_and_collinear_neighbourhoods_are_flagged() {
        let same = PointCloudFrame {
            xyz: vec![Vec3::new(0.1, 0.2, 1.0); 4],
            rgb: vec![Vec3::zero(); 4],
            normal: vec![-Vec3::unit_z(); 4],
            pixel_index: vec![0, 1, 2, 3],
        };
        let (out, report) = estimate_normals(&same, 3).unwrap();
        assert_eq!(report.flagged, vec![0, 1, 2, 3]);
        assert!(out.normal.iter().all(|n| *n == Vec3::new(0.0, 0.0, -1.0)));

        let line = PointCloudFrame {
            xyz: (0..3).map(|i| Vec3::new(0.1 * i as f64, 0.05 * i as f64, 1.0)).collect(),
            rgb: vec![Vec3::zero(); 3],
            normal: vec![-Vec3::unit_z(); 3],
            pixel_index: vec![0, 1, 2],
        };
        let (_, report) = estimate_normals(&line, 3).unwrap();
        assert_eq!(report.flagged_count(), 3);
    }

    #[test]
    fn subsample_identity_and_determinism() {
        let k = intrinsics(20.0, 5.0, 10);
        let cloud = backproject(&flat_image(10, 1.0), &k).unwrap();
        assert_eq!(subsample(&cloud, 100, 4), cloud);
        let a = subsample_indices(1000, 256, 17);
        let b = subsample_indices(1000, 256, 17);
        let c = subsample_indices(1000, 256, 18);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 256);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
