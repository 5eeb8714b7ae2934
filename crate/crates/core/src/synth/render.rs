//! Z-buffered surfel rasterisation of a scene layout into depth, colour and
//! per-pixel labels.

use serde::{Deserialize, Serialize};

use super::templates::Shape;
use super::SynthError;
use crate::geometry::{CameraIntrinsics, RgbdImage};
use crate::num::{Mat3, Pose, Vec3};

type V = Vec3<f64>;

/// Rectangular table top at world z = 0, centred on the world origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub half_extent: [f64; 2],
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub shape: Shape,
    /// Object-local to world.
    pub pose: Pose<f64>,
    /// Base colour per part.
    pub colors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    /// World to camera (x right, y down, z forward).
    pub camera_pose: Pose<f64>,
    pub table: Option<Table>,
    pub objects: Vec<PlacedObject>,
    /// Surface sample spacing in meters.
    pub surface_spacing: f64,
}

impl SceneLayout {
    pub fn camera_center(&self) -> V {
        self.camera_pose.inverse().translation
    }

    /// Camera centre in object `i`'s local frame.
    pub fn camera_local(&self, i: usize) -> V {
        self.objects[i].pose.inverse().apply(self.camera_center())
    }
}

/// Camera pose looking at `target` from `distance` meters, raised by
/// `elevation` radians above the table and rotated by `azimuth` around +z
/// (azimuth 0 places the camera on the −y side).
pub fn look_at_pose(target: V, distance: f64, elevation: f64, azimuth: f64) -> Pose<f64> {
    let offset = V::new(
        distance * elevation.cos() * azimuth.sin(),
        -distance * elevation.cos() * azimuth.cos(),
        distance * elevation.sin(),
    );
    let center = target + offset;
    let forward = (target - center).normalized().expect("nonzero distance");
    let right = forward.cross(V::unit_z()).normalized().expect("camera not looking straight down");
    let down = forward.cross(right);
    let rotation = Mat3::from_rows([right.to_array(), down.to_array(), forward.to_array()]);
    Pose::new(rotation, -rotation.mul_vec(center))
}

/// Per-pixel render output, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub width: usize,
    pub height: usize,
    /// Camera-frame depth, 0 where nothing was hit.
    pub depth: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub labels: Vec<u8>,
    /// `(object, part)` that produced each pixel; `None` for table and void.
    pub owner: Vec<Option<(usize, usize)>>,
}

impl Rendering {
    pub fn to_image(&self) -> RgbdImage<f64> {
        RgbdImage { width: self.width, height: self.height, depth: self.depth.clone(), rgb: self.color.clone() }
    }

    pub fn object_pixel_count(&self) -> usize {
        self.owner.iter().filter(|o| o.is_some()).count()
    }
}

const SURFEL_RADIUS_FACTOR: f64 = 0.75;
/// Surfels whose normal faces away from the camera by more than this cosine
/// are culled.
const BACKFACE_COS: f64 = -0.02;

pub fn render_layout(layout: &SceneLayout, k: &CameraIntrinsics) -> Result<Rendering, SynthError> {
    k.validate()?;
    let (w, h) = (k.width, k.height);
    let mut out = Rendering {
        width: w,
        height: h,
        depth: vec![0.0; w * h],
        color: vec![[0.0; 3]; w * h],
        labels: vec![0; w * h],
        owner: vec![None; w * h],
    };
    let mut zbuf = vec![f64::INFINITY; w * h];
    let cam = &layout.camera_pose;

    if let Some(table) = &layout.table {
        let to_world = cam.inverse();
        let origin = to_world.translation;
        for v in 0..h {
            for u in 0..w {
                let dir = to_world.apply_vector(k.ray(u as f64, v as f64));
                if dir.z.abs() < 1e-12 {
                    continue;
                }
                let t = -origin.z / dir.z;
                if t <= 0.0 {
                    continue;
                }
                let hit = origin + dir * t;
                if hit.x.abs() <= table.half_extent[0] && hit.y.abs() <= table.half_extent[1] {
                    let idx = v * w + u;
                    zbuf[idx] = t;
                    out.color[idx] = table.color;
                }
            }
        }
    }

    let spacing = layout.surface_spacing;
    let surfel_r = SURFEL_RADIUS_FACTOR * spacing;
    for (oi, obj) in layout.objects.iter().enumerate() {
        let to_cam = cam.compose(&obj.pose);
        for (pi, part) in obj.shape.parts().iter().enumerate() {
            let label = part.affordance.label();
            let color = obj.colors.get(pi).copied().unwrap_or([0.5; 3]);
            for prim in &part.primitives {
                for s in prim.sample(spacing) {
                    let p = to_cam.apply(s.position);
                    let n = to_cam.apply_vector(s.normal);
                    if p.z <= 1e-6 || n.dot(-p) < BACKFACE_COS * p.norm() {
                        continue;
                    }
                    let (uf, vf) = k.project(p);
                    let reach = (surfel_r * k.fx.max(k.fy) / p.z).ceil() as i64 + 1;
                    let (uc, vc) = (uf.round() as i64, vf.round() as i64);
                    for vv in (vc - reach)..=(vc + reach) {
                        if vv < 0 || vv >= h as i64 {
                            continue;
                        }
                        for uu in (uc - reach)..=(uc + reach) {
                            if uu < 0 || uu >= w as i64 {
                                continue;
                            }
                            let ray = k.ray(uu as f64, vv as f64);
                            let denom = n.dot(ray);
                            if denom.abs() < 1e-9 {
                                continue;
                            }
                            let t = n.dot(p) / denom;
                            if t <= 0.0 || (ray * t).distance(p) > surfel_r {
                                continue;
                            }
                            let idx = vv as usize * w + uu as usize;
                            if t < zbuf[idx] {
                                zbuf[idx] = t;
                                out.labels[idx] = label;
                                out.owner[idx] = Some((oi, pi));
                                out.color[idx] = color;
                            }
                        }
                    }
                }
            }
        }
    }

    if out.object_pixel_count() == 0 {
        return Err(SynthError::EmptyView);
    }
    for (d, z) in out.depth.iter_mut().zip(&zbuf) {
        if z.is_finite() {
            *d = *z;
        }
    }
    Ok(out)
}
