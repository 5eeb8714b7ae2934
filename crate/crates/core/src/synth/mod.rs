//! Synthetic tabletop scenes with per-point affordance labels and keypoint
//! quadruplets.

mod render;
pub mod shapes;
pub mod templates;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{look_at_pose, render_layout, PlacedObject, Rendering, SceneLayout, Table};
pub use templates::{Category, Part, Shape};

use crate::geometry::{
    backproject, estimate_normals, subsample_indices, CameraIntrinsics, GeometryError, PointCloudFrame,
};
use crate::instance::{InstanceRecord, KeypointQuadruplet};
use crate::spatial::connected_components;
use crate::num::{Mat3, Pose, Scalar, Vec3};

type V = Vec3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("could not place {category} after {attempts} attempts in crowded config ({config})")]
    Crowded { category: String, attempts: usize, config: String },
    #[error("camera view contains no object pixels")]
    EmptyView,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Categories objects are drawn from (uniformly, with replacement).
    pub templates: Vec<Category>,
    pub min_objects: usize,
    pub max_objects: usize,
    pub intrinsics: CameraIntrinsics,
    pub camera_distance: f64,
    pub camera_elevation_deg: f64,
    /// Uniform azimuth jitter around the default viewpoint, in degrees.
    pub camera_azimuth_jitter_deg: f64,
    pub table_half_extent: [f64; 2],
    /// Clearance between object footprints and the table edge.
    pub table_margin: f64,
    /// Minimum clearance between object footprints.
    pub min_gap: f64,
    pub surface_spacing: f64,
    /// Seed points kept per scene after subsampling.
    pub points: usize,
    /// Parts with fewer visible seed points are relabelled background.
    pub min_visible_points: usize,
    /// Seed points of one part closer than this are one connected region;
    /// all but the largest region of a part are relabelled background.
    pub fragment_radius: f64,
    pub normal_neighbors: usize,
    /// Half-width of the uniform per-pixel colour noise.
    pub color_noise: f64,
    pub max_placement_attempts: usize,
    /// Full re-placements of all objects tried before giving up.
    pub placement_restarts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            templates: Category::ALL.to_vec(),
            min_objects: 1,
            max_objects: 3,
            intrinsics: CameraIntrinsics::default(),
            camera_distance: 0.6,
            camera_elevation_deg: 60.0,
            camera_azimuth_jitter_deg: 0.0,
            table_half_extent: [0.25, 0.18],
            table_margin: 0.01,
            min_gap: 0.04,
            surface_spacing: 0.002,
            points: 2048,
            min_visible_points: 20,
            fragment_radius: 0.03,
            normal_neighbors: 10,
            color_noise: 0.03,
            max_placement_attempts: 200,
            placement_restarts: 20,
        }
    }
}

/// Hard upper bound on objects per scene.
pub const MAX_OBJECTS: usize = 4;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.templates.is_empty() {
            return bad("templates must list at least one category");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > MAX_OBJECTS {
            return bad("object counts must satisfy 1 <= min_objects <= max_objects <= 4");
        }
        self.intrinsics.validate()?;
        let positive = [
            ("camera_distance", self.camera_distance),
            ("surface_spacing", self.surface_spacing),
            ("fragment_radius", self.fragment_radius),
            ("table_half_extent[0]", self.table_half_extent[0]),
            ("table_half_extent[1]", self.table_half_extent[1]),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                return Err(SynthError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.camera_elevation_deg > 0.0 && self.camera_elevation_deg < 90.0) {
            return bad("camera_elevation_deg must lie in (0, 90)");
        }
        if self.min_gap < 0.0 || self.table_margin < 0.0 || self.color_noise < 0.0 {
            return bad("min_gap, table_margin and color_noise must be non-negative");
        }
        if self.points == 0 {
            return bad("points must be at least 1");
        }
        if self.normal_neighbors < 3 {
            return bad("normal_neighbors must be at least 3");
        }
        if self.max_placement_attempts == 0 {
            return bad("max_placement_attempts must be at least 1");
        }
        Ok(())
    }

    fn summary(&self) -> String {
        let names: Vec<&str> = self.templates.iter().map(|c| c.name()).collect();
        format!(
            "templates [{}], {}..{} objects, table {:.2}x{:.2} m, gap {:.3} m",
            names.join(", "),
            self.min_objects,
            self.max_objects,
            2.0 * self.table_half_extent[0],
            2.0 * self.table_half_extent[1],
            self.min_gap
        )
    }
}

/// A generated scene: the seed point cloud with labels and instances, plus
/// everything needed to regenerate or simulate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SceneGroundTruth<T> {
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub layout: SceneLayout,
    pub cloud: PointCloudFrame<T>,
    pub labels: Vec<u8>,
    pub instances: Vec<InstanceRecord<T>>,
    /// `(object, part)` in `layout` that produced each instance.
    pub sources: Vec<(usize, usize)>,
    /// Rendered depth image, row-major, 0 = invalid.
    pub depth: Vec<f32>,
}

impl<T: Scalar> SceneGroundTruth<T> {
    pub fn camera_pose(&self) -> &Pose<f64> {
        &self.layout.camera_pose
    }

    pub fn cast<U: Scalar>(&self) -> SceneGroundTruth<U> {
        SceneGroundTruth {
            seed: self.seed,
            intrinsics: self.intrinsics,
            layout: self.layout.clone(),
            cloud: self.cloud.cast(),
            labels: self.labels.clone(),
            instances: self.instances.iter().map(|i| i.cast()).collect(),
            sources: self.sources.clone(),
            depth: self.depth.clone(),
        }
    }

    pub fn instance_from(&self, object: usize, part: usize) -> Option<&InstanceRecord<T>> {
        self.sources.iter().position(|s| *s == (object, part)).map(|i| &self.instances[i])
    }
}

/// Random scene: object count and categories drawn from `cfg`.
pub fn sample_scene<T: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<SceneGroundTruth<T>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let categories: Vec<Category> =
        (0..count).map(|_| cfg.templates[rng.gen_range(0..cfg.templates.len())]).collect();
    let layout = sample_layout(cfg, &categories, &mut rng)?;
    build_ground_truth(cfg, layout, seed, &mut rng)
}

/// Scene with exactly the given objects, in order.
pub fn sample_scene_with<T: Scalar>(
    cfg: &SynthConfig,
    categories: &[Category],
    seed: u64,
) -> Result<SceneGroundTruth<T>, SynthError> {
    cfg.validate()?;
    if categories.is_empty() || categories.len() > MAX_OBJECTS {
        return Err(SynthError::InvalidConfig(format!("scene needs 1..=4 objects, got {}", categories.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = sample_layout(cfg, categories, &mut rng)?;
    build_ground_truth(cfg, layout, seed, &mut rng)
}

/// Re-renders a scene's layout with the given intrinsics.
pub fn render_views<T: Scalar>(
    scene: &SceneGroundTruth<T>,
    k: &CameraIntrinsics,
) -> Result<Rendering, SynthError> {
    render_layout(&scene.layout, k)
}

/// Oriented footprint rectangle on the table.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    center: [f64; 2],
    axes: [[f64; 2]; 2],
    half: [f64; 2],
}

impl Footprint {
    fn corners(&self) -> [[f64; 2]; 4] {
        let mut out = [[0.0; 2]; 4];
        for (i, (s0, s1)) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].into_iter().enumerate() {
            for d in 0..2 {
                out[i][d] = self.center[d] + s0 * self.half[0] * self.axes[0][d] + s1 * self.half[1] * self.axes[1][d];
            }
        }
        out
    }

    /// Separating-axis test on rectangles grown by `gap / 2` each.
    fn overlaps(&self, other: &Footprint, gap: f64) -> bool {
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let d = [other.center[0] - self.center[0], other.center[1] - self.center[1]];
        for axis in self.axes.iter().chain(other.axes.iter()) {
            let r_self: f64 = (0..2).map(|i| (self.half[i] + gap / 2.0) * dot(self.axes[i], *axis).abs()).sum();
            let r_other: f64 = (0..2).map(|i| (other.half[i] + gap / 2.0) * dot(other.axes[i], *axis).abs()).sum();
            if dot(d, *axis).abs() > r_self + r_other {
                return false;
            }
        }
        true
    }
}

fn local_footprint(shape: &Shape, spacing: f64) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for part in shape.parts() {
        for prim in &part.primitives {
            for s in prim.sample(spacing) {
                lo[0] = lo[0].min(s.position.x);
                lo[1] = lo[1].min(s.position.y);
                hi[0] = hi[0].max(s.position.x);
                hi[1] = hi[1].max(s.position.y);
            }
        }
    }
    let pad = spacing;
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let half = [0.5 * (hi[0] - lo[0]) + pad, 0.5 * (hi[1] - lo[1]) + pad];
    (center, half)
}

/// Rejection-samples one pose for a footprint with half extents `half`.
fn place_one(
    cfg: &SynthConfig,
    half: [f64; 2],
    placed: &[Footprint],
    rng: &mut ChaCha8Rng,
) -> Option<(Footprint, f64)> {
    let [hx, hy] = cfg.table_half_extent;
    let (lx, ly) = (hx - cfg.table_margin, hy - cfg.table_margin);
    for _ in 0..cfg.max_placement_attempts {
        let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
        let pos = [rng.gen_range(-lx..=lx), rng.gen_range(-ly..=ly)];
        let (c, s) = (yaw.cos(), yaw.sin());
        let fp = Footprint { center: pos, axes: [[c, s], [-s, c]], half };
        let inside = fp.corners().iter().all(|p| p[0].abs() <= lx && p[1].abs() <= ly);
        if inside && placed.iter().all(|other| !fp.overlaps(other, cfg.min_gap)) {
            return Some((fp, yaw));
        }
    }
    None
}

fn sample_layout(cfg: &SynthConfig, categories: &[Category], rng: &mut ChaCha8Rng) -> Result<SceneLayout, SynthError> {
    let jitter = cfg.camera_azimuth_jitter_deg.to_radians();
    let azimuth = if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
    let camera_pose = look_at_pose(
        V::new(0.0, 0.0, 0.03),
        cfg.camera_distance,
        cfg.camera_elevation_deg.to_radians(),
        azimuth,
    );
    let drafts: Vec<(Shape, Vec<[f64; 3]>)> = categories
        .iter()
        .map(|&c| {
            let shape = Shape::sample(c, rng);
            let colors = shape.sample_colors(rng);
            (shape, colors)
        })
        .collect();
    let footprints: Vec<([f64; 2], [f64; 2])> =
        drafts.iter().map(|(shape, _)| local_footprint(shape, cfg.surface_spacing)).collect();
    // largest footprints first; objects keep their requested order
    let mut order: Vec<usize> = (0..drafts.len()).collect();
    order.sort_by(|&a, &b| {
        let area = |i: usize| footprints[i].1[0] * footprints[i].1[1];
        area(b).total_cmp(&area(a)).then(a.cmp(&b))
    });
    let rounds = cfg.placement_restarts + 1;
    let mut objects: Vec<Option<PlacedObject>> = vec![None; drafts.len()];
    let mut stuck = None;
    'round: for _ in 0..rounds {
        let mut placed: Vec<Footprint> = Vec::new();
        for &i in &order {
            let (local_center, half) = footprints[i];
            let Some((fp, yaw)) = place_one(cfg, half, &placed, rng) else {
                stuck = Some(i);
                continue 'round;
            };
            let rotation = Mat3::rotation_z(yaw);
            let offset = rotation.mul_vec(V::new(local_center[0], local_center[1], 0.0));
            let translation = V::new(fp.center[0] - offset.x, fp.center[1] - offset.y, 0.0);
            placed.push(fp);
            let (shape, colors) = drafts[i].clone();
            objects[i] = Some(PlacedObject { shape, pose: Pose::new(rotation, translation), colors });
        }
        stuck = None;
        break;
    }
    if let Some(i) = stuck {
        return Err(SynthError::Crowded {
            category: categories[i].name().to_string(),
            attempts: rounds * cfg.max_placement_attempts,
            config: cfg.summary(),
        });
    }
    let objects = objects.into_iter().map(|o| o.expect("every object placed")).collect();
    Ok(SceneLayout {
        camera_pose,
        table: Some(Table { half_extent: cfg.table_half_extent, color: [0.55, 0.45, 0.35] }),
        objects,
        surface_spacing: cfg.surface_spacing,
    })
}

/// Seed offset separating the subsampling stream from the layout stream.
const SUBSAMPLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Renders `layout`, builds the seed cloud and attaches labels, instances and
/// keypoints.
pub fn build_ground_truth<T: Scalar>(
    cfg: &SynthConfig,
    layout: SceneLayout,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SceneGroundTruth<T>, SynthError> {
    let k = cfg.intrinsics;
    let rendering = render_layout(&layout, &k)?;
    let mut image = rendering.to_image();
    for c in image.rgb.iter_mut() {
        for ch in c.iter_mut() {
            let noise = if cfg.color_noise > 0.0 { rng.gen_range(-cfg.color_noise..=cfg.color_noise) } else { 0.0 };
            *ch = (*ch + noise).clamp(0.0, 1.0);
        }
    }
    let full = backproject(&image, &k)?;
    let (full, report) = estimate_normals(&full, cfg.normal_neighbors.min(full.len()).max(3))?;
    if report.flagged_count() > 0 {
        log::debug!("scene {seed}: {} degenerate normal neighbourhoods", report.flagged_count());
    }
    let to_world = layout.camera_pose.inverse();

    // pair every anchor with its nearest dense point; anchors without an
    // observed point within ANCHOR_TOLERANCE fall back to that point
    let mut dense_members: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, &pix) in full.pixel_index.iter().enumerate() {
        if let Some(key) = rendering.owner[pix] {
            dense_members.entry(key).or_default().push(i);
        }
    }
    let mut support: BTreeMap<(usize, usize), [(usize, Option<V>); 4]> = BTreeMap::new();
    for (&(oi, pi), idx) in &dense_members {
        let obj = &layout.objects[oi];
        let candidates = &obj.shape.anchor_candidates(layout.camera_local(oi))[pi];
        let world: Vec<V> = idx.iter().map(|&i| to_world.apply(full.xyz[i])).collect();
        let mut best: Option<((usize, f64), [(usize, Option<V>); 4])> = None;
        for quad in candidates {
            let mut slots = [(0usize, None); 4];
            let (mut misses, mut cost) = (0, 0.0);
            for (slot, a) in quad.iter().enumerate() {
                let anchor = obj.pose.apply(*a);
                let (j, d2) = nearest(anchor, &world);
                let exact = d2 <= ANCHOR_TOLERANCE * ANCHOR_TOLERANCE;
                slots[slot] = (idx[j], exact.then(|| layout.camera_pose.apply(anchor)));
                misses += usize::from(!exact);
                cost += d2;
            }
            if best.is_none_or(|((m, c), _)| (misses, cost) < (m, c)) {
                best = Some(((misses, cost), slots));
            }
        }
        support.insert((oi, pi), best.expect("at least one candidate").1);
    }

    // uniform sample of the remaining budget, plus the keypoint support points
    let forced: BTreeSet<usize> = support.values().flatten().map(|s| s.0).collect();
    let keep: Vec<usize> = if full.len() <= cfg.points {
        (0..full.len()).collect()
    } else {
        let pool: Vec<usize> = (0..full.len()).filter(|i| !forced.contains(i)).collect();
        let budget = cfg.points.saturating_sub(forced.len()).min(pool.len());
        let mut keep: Vec<usize> = subsample_indices(pool.len(), budget, seed ^ SUBSAMPLE_SALT)
            .into_iter()
            .map(|j| pool[j])
            .chain(forced.iter().copied())
            .collect();
        keep.sort_unstable();
        keep
    };
    let mut cloud = full.select(&keep);
    cloud.quantize_for_storage();
    let mut labels: Vec<u8> = cloud.pixel_index.iter().map(|&p| rendering.labels[p]).collect();

    let mut members: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, &pix) in cloud.pixel_index.iter().enumerate() {
        if let Some(key) = rendering.owner[pix] {
            members.entry(key).or_default().push(i);
        }
    }
    let mut instances = Vec::new();
    let mut sources = Vec::new();
    for (key, mut idx) in members {
        let positions: Vec<V> = idx.iter().map(|&i| cloud.xyz[i]).collect();
        let regions = connected_components(&positions, cfg.fragment_radius);
        let largest = regions.iter().max_by_key(|r| r.len()).expect("group is nonempty");
        let main: Vec<usize> = largest.iter().map(|&r| idx[r]).collect();
        for &i in &idx {
            if main.binary_search(&i).is_err() {
                labels[i] = 0;
            }
        }
        idx = main;
        let slots = support[&key];
        let supported = slots.iter().all(|(d, _)| idx.binary_search(&keep.binary_search(d).unwrap()).is_ok());
        let quad = if idx.len() >= cfg.min_visible_points && supported {
            let quad: KeypointQuadruplet<f64> = slots.map(|(d, anchor)| {
                anchor.unwrap_or_else(|| {
                    let i = keep.binary_search(&d).expect("support points are kept");
                    cloud.xyz[i]
                })
            });
            distinct(&quad).then_some(quad)
        } else {
            None
        };
        match quad {
            Some(quad) => {
                instances.push(InstanceRecord {
                    id: instances.len(),
                    affordance: labels[idx[0]],
                    point_indices: idx,
                    keypoints: quad.map(|k| k.cast()),
                    warnings: None,
                });
                sources.push(key);
            }
            None => {
                for &i in &idx {
                    labels[i] = 0;
                }
            }
        }
    }
    Ok(SceneGroundTruth {
        seed,
        intrinsics: k,
        layout,
        cloud: cloud.cast(),
        labels,
        instances,
        sources,
        depth: rendering.depth.iter().map(|&d| d as f32).collect(),
    })
}

/// Index of the point nearest `anchor` and its squared distance.
/// Largest anchor-to-observation gap for which the analytic anchor is kept.
const ANCHOR_TOLERANCE: f64 = 0.0015;

fn nearest(anchor: V, points: &[V]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = p.distance_sq(anchor);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn distinct(q: &KeypointQuadruplet<f64>) -> bool {
    (0..4).all(|a| (a + 1..4).all(|b| q[a].distance(q[b]) > 1e-6))
}
