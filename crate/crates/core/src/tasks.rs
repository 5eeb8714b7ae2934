//! Kinematic simulation of four keypoint-driven manipulation tasks.
//!
//! Every task reads execution frames off predicted quadruplets, moves the
//! tool along straight-line frame-to-frame motions and checks the result
//! against the true object geometry of the scene:
//!
//! 1. pick a tomato by its grasp frame and release it above the bowl's
//!    contain frame; success iff the tomato centre lands inside the bowl
//!    cavity cylinder.
//! 2. grasp a knife and align its cut frame with the top of a virtual
//!    sausage; success iff the true edge touches the sausage and the blade
//!    faces into it within the cut plane.
//! 3. grasp a spoon and lower its scoop frame into the bowl's contain frame;
//!    success iff the scoop clears the rim and its tip passes below the rim.
//! 4. wrap-grasp a cup; success iff the predicted width fits the gripper and
//!    matches the true diameter and the grip axis is horizontal.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{frame_from_quadruplet, ExecutionFrame};
use crate::instance::{quadruplet_centroid, KeypointQuadruplet};
use crate::labels::Affordance;
use crate::model::{forward, ModelError, ModelParams};
use crate::num::{Pose, Vec3};
use crate::synth::{sample_scene_with, Category, Shape, SynthConfig, SynthError};
use crate::vote::{extract_quadruplets, AffordanceInstance, ClusterConfig, ClusterError};
use crate::Scene;

type V = Vec3<f64>;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no task {0}; tasks are 1 to 4")]
    UnknownTask(u8),
    #[error("task {task} trial {trial}: no usable scene in {attempts} attempts")]
    NoScene { task: u8, trial: usize, attempts: usize },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PickPlace,
    Cut,
    Scoop,
    WrapGrasp,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::PickPlace, Task::Cut, Task::Scoop, Task::WrapGrasp];

    pub fn id(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_id(id: u8) -> Result<Task, TaskError> {
        Task::ALL.get((id as usize).wrapping_sub(1)).copied().ok_or(TaskError::UnknownTask(id))
    }

    /// Objects in the task scene, in layout order.
    pub fn categories(self) -> &'static [Category] {
        match self {
            Task::PickPlace => &[Category::Tomato, Category::Bowl],
            Task::Cut => &[Category::Knife],
            Task::Scoop => &[Category::Spoon, Category::Bowl],
            Task::WrapGrasp => &[Category::Cup],
        }
    }

    /// `(object, part, affordance)` triples the task acts on.
    pub fn required(self) -> &'static [(usize, usize, Affordance)] {
        match self {
            Task::PickPlace => &[(0, 0, Affordance::Grasp), (1, 0, Affordance::Contain)],
            Task::Cut => &[(0, 0, Affordance::Grasp), (0, 1, Affordance::Cut)],
            Task::Scoop => &[(0, 0, Affordance::Grasp), (0, 1, Affordance::Scoop), (1, 0, Affordance::Contain)],
            Task::WrapGrasp => &[(0, 0, Affordance::WrapGrasp)],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    None,
    Planning,
    Grasp,
    Execution,
}

/// Tolerances and virtual props, all lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Maximum jaw opening.
    pub gripper_stroke: f64,
    /// Jaw-to-surface distance that counts as contact.
    pub contact_tolerance: f64,
    /// Maximum distance from a wrap-grasp origin to the body surface.
    pub grasp_tolerance: f64,
    /// A prediction serves a required part when its keypoint centroid is this
    /// close to the true one.
    pub match_radius: f64,
    pub drop_height: f64,
    pub sausage_radius: f64,
    pub sausage_length: f64,
    /// World position of the sausage axis midpoint.
    pub sausage_center: [f64; 3],
    /// World direction of the sausage axis.
    pub sausage_axis: [f64; 3],
    pub cut_contact_tolerance: f64,
    pub cut_angle_tolerance_deg: f64,
    pub scoop_depth: f64,
    pub rim_clearance: f64,
    /// Allowed relative error of the wrap-grasp width.
    pub width_tolerance: f64,
    pub grip_axis_tolerance_deg: f64,
    /// Jaw sweep sampling step.
    pub jaw_step: f64,
    /// Scene resamples per trial before giving up.
    pub max_scene_attempts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            gripper_stroke: 0.08,
            contact_tolerance: 0.003,
            grasp_tolerance: 0.01,
            match_radius: 0.1,
            drop_height: 0.1,
            sausage_radius: 0.02,
            sausage_length: 0.15,
            sausage_center: [0.0, 0.25, 0.02],
            sausage_axis: [1.0, 0.0, 0.0],
            cut_contact_tolerance: 0.005,
            cut_angle_tolerance_deg: 20.0,
            scoop_depth: 0.02,
            rim_clearance: 0.003,
            width_tolerance: 0.15,
            grip_axis_tolerance_deg: 20.0,
            jaw_step: 0.0005,
            max_scene_attempts: 20,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        let positive = [
            ("gripper_stroke", self.gripper_stroke),
            ("contact_tolerance", self.contact_tolerance),
            ("grasp_tolerance", self.grasp_tolerance),
            ("match_radius", self.match_radius),
            ("sausage_radius", self.sausage_radius),
            ("sausage_length", self.sausage_length),
            ("cut_contact_tolerance", self.cut_contact_tolerance),
            ("cut_angle_tolerance_deg", self.cut_angle_tolerance_deg),
            ("width_tolerance", self.width_tolerance),
            ("grip_axis_tolerance_deg", self.grip_axis_tolerance_deg),
            ("jaw_step", self.jaw_step),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(TaskError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("drop_height", self.drop_height), ("scoop_depth", self.scoop_depth), ("rim_clearance", self.rim_clearance)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TaskError::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("cut_angle_tolerance_deg", self.cut_angle_tolerance_deg), ("grip_axis_tolerance_deg", self.grip_axis_tolerance_deg)] {
            if v >= 90.0 {
                return Err(TaskError::InvalidConfig(format!("{name} must be below 90, got {v}")));
            }
        }
        if self.sausage_center.iter().chain(&self.sausage_axis).any(|v| !v.is_finite())
            || V::from(self.sausage_axis).normalized().is_none()
        {
            return Err(TaskError::InvalidConfig("sausage_center and sausage_axis must be finite, axis nonzero".into()));
        }
        if V::from(self.sausage_axis).normalized().is_some_and(|a| a.z.abs() > 0.99) {
            return Err(TaskError::InvalidConfig("sausage_axis must lie roughly horizontal".into()));
        }
        if self.jaw_step >= self.gripper_stroke {
            return Err(TaskError::InvalidConfig("jaw_step must be smaller than gripper_stroke".into()));
        }
        if self.max_scene_attempts == 0 {
            return Err(TaskError::InvalidConfig("max_scene_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: u8,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub failure: FailureClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Clearances and contact distances in meters, angles in degrees.
    pub diagnostics: BTreeMap<String, f64>,
}

/// Predicted quadruplets for one scene, tagged by affordance label.
pub type Predictions = [(u8, KeypointQuadruplet<f64>)];

/// Ground-truth quadruplets in the shape of predictions.
pub fn oracle_predictions(scene: &Scene) -> Vec<(u8, KeypointQuadruplet<f64>)> {
    scene.instances.iter().map(|i| (i.affordance, i.keypoints)).collect()
}

pub fn predictions_from_instances(instances: &[AffordanceInstance<f64>]) -> Vec<(u8, KeypointQuadruplet<f64>)> {
    instances.iter().map(|i| (i.affordance, i.quadruplet)).collect()
}

struct Verdict {
    failure: FailureClass,
    reason: Option<String>,
    diagnostics: BTreeMap<String, f64>,
}

impl Verdict {
    fn new() -> Self {
        Verdict { failure: FailureClass::None, reason: None, diagnostics: BTreeMap::new() }
    }

    fn note(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), value);
    }

    fn fail(mut self, failure: FailureClass, reason: String) -> Self {
        self.failure = failure;
        self.reason = Some(reason);
        self
    }
}

/// Scene geometry in camera coordinates.
struct World<'a> {
    scene: &'a Scene,
    up: V,
}

impl<'a> World<'a> {
    fn new(scene: &'a Scene) -> Self {
        World { scene, up: scene.layout.camera_pose.apply_vector(V::unit_z()) }
    }

    /// Object-local to camera.
    fn object_pose(&self, object: usize) -> Pose<f64> {
        self.scene.layout.camera_pose.compose(&self.scene.layout.objects[object].pose)
    }

    fn shape(&self, object: usize) -> &Shape {
        &self.scene.layout.objects[object].shape
    }

    fn part_distance(&self, object: usize, part: usize, p: V) -> f64 {
        let local = self.object_pose(object).inverse().apply(p);
        self.shape(object).parts()[part].distance(local)
    }

    fn local_point(&self, object: usize, p: V) -> V {
        self.object_pose(object).apply(p)
    }

    fn horizontal(&self, v: V) -> V {
        v.reject_from(self.up)
    }
}

/// The nearest prediction of the right label within the match radius.
fn find_prediction(
    world: &World,
    predictions: &Predictions,
    object: usize,
    part: usize,
    affordance: Affordance,
    cfg: &SimConfig,
) -> Result<KeypointQuadruplet<f64>, String> {
    let truth = world
        .scene
        .instance_from(object, part)
        .ok_or_else(|| format!("object {object} shows no {} region", affordance.name()))?;
    let target = truth.centroid();
    predictions
        .iter()
        .filter(|(label, _)| *label == affordance.label())
        .map(|(_, q)| (quadruplet_centroid(q).distance(target), q))
        .filter(|(d, _)| *d <= cfg.match_radius)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, q)| *q)
        .ok_or_else(|| format!("no {} prediction within {} m of object {object}", affordance.name(), cfg.match_radius))
}

fn true_quadruplet(world: &World, object: usize, part: usize) -> KeypointQuadruplet<f64> {
    world.scene.instance_from(object, part).expect("checked during planning").keypoints
}

/// Closes parallel jaws along the frame's y axis from a `gripper_stroke`
/// opening. The part must be touched on both sides of the origin and fit
/// between the open jaws.
fn jaw_check(world: &World, object: usize, part: usize, frame: &ExecutionFrame<f64>, cfg: &SimConfig, v: &mut Verdict) -> Result<(), String> {
    let half = cfg.gripper_stroke / 2.0;
    let steps = (half / cfg.jaw_step).ceil() as usize;
    for (side, name) in [(1.0, "jaw_plus"), (-1.0, "jaw_minus")] {
        let at = |k: usize| {
            let t = side * half * k as f64 / steps as f64;
            world.part_distance(object, part, frame.origin + frame.y_axis * t)
        };
        let closest = (0..=steps).map(at).fold(f64::INFINITY, f64::min);
        v.note(&format!("{name}_contact"), closest);
        if closest > cfg.contact_tolerance {
            return Err(format!("{name} misses the part by {closest:.4} m"));
        }
        let rim = at(steps);
        v.note(&format!("{name}_open_clearance"), rim);
        if rim <= cfg.contact_tolerance {
            return Err(format!("part wider than the {} m stroke", cfg.gripper_stroke));
        }
    }
    Ok(())
}

fn frame_for(q: &KeypointQuadruplet<f64>, affordance: Affordance) -> Result<ExecutionFrame<f64>, String> {
    frame_from_quadruplet(q, affordance.label()).map_err(|e| format!("{} frame: {e}", affordance.name()))
}

/// Simulates one task on one scene.
pub fn simulate_task(task: Task, scene: &Scene, predictions: &Predictions, cfg: &SimConfig) -> Result<TaskOutcome, TaskError> {
    cfg.validate()?;
    let world = World::new(scene);
    let mut quads = Vec::new();
    let mut frames = Vec::new();
    let mut verdict = Verdict::new();
    for &(object, part, affordance) in task.required() {
        let planned = find_prediction(&world, predictions, object, part, affordance, cfg)
            .and_then(|q| frame_for(&q, affordance).map(|f| (q, f)));
        match planned {
            Ok((q, f)) => {
                quads.push(q);
                frames.push(f);
            }
            Err(reason) => {
                verdict = verdict.fail(FailureClass::Planning, reason);
                break;
            }
        }
    }
    if verdict.failure == FailureClass::None {
        verdict = match task {
            Task::PickPlace => pick_place(&world, &frames, cfg, verdict),
            Task::Cut => cut(&world, &frames, cfg, verdict),
            Task::Scoop => scoop(&world, &frames, cfg, verdict),
            Task::WrapGrasp => wrap_grasp(&world, &quads[0], &frames[0], cfg, verdict),
        };
    }
    Ok(TaskOutcome {
        task: task.id(),
        trial: 0,
        seed: scene.seed,
        success: verdict.failure == FailureClass::None,
        failure: verdict.failure,
        reason: verdict.reason,
        diagnostics: verdict.diagnostics,
    })
}

fn pick_place(world: &World, frames: &[ExecutionFrame<f64>], cfg: &SimConfig, mut v: Verdict) -> Verdict {
    let (grasp, contain) = (&frames[0], &frames[1]);
    if let Err(reason) = jaw_check(world, 0, 0, grasp, cfg, &mut v) {
        return v.fail(FailureClass::Grasp, reason);
    }
    let Shape::Tomato { radius } = *world.shape(0) else { unreachable!("task 1 scenes start with a tomato") };
    let Shape::Bowl { radius: cavity, wall } = *world.shape(1) else { unreachable!("task 1 scenes hold a bowl") };
    let tomato = world.local_point(0, V::new(0.0, 0.0, radius));
    let rim_center = world.local_point(1, V::new(0.0, 0.0, cavity + wall));
    let release = contain.origin + contain.x_axis * cfg.drop_height + (tomato - grasp.origin);
    let landing = world.horizontal(release - rim_center).norm();
    v.note("landing_offset", landing);
    v.note("cavity_radius", cavity);
    v.note("release_height", (release - rim_center).dot(world.up));
    if landing > cavity {
        return v.fail(FailureClass::Execution, format!("tomato lands {landing:.4} m from the bowl axis"));
    }
    v
}

/// Rigid motion taking `from` onto `to`.
fn alignment(from: &ExecutionFrame<f64>, to: &ExecutionFrame<f64>) -> Pose<f64> {
    to.pose().compose(&from.pose().inverse())
}

fn cut(world: &World, frames: &[ExecutionFrame<f64>], cfg: &SimConfig, mut v: Verdict) -> Verdict {
    let (grasp, blade) = (&frames[0], &frames[1]);
    if let Err(reason) = jaw_check(world, 0, 0, grasp, cfg, &mut v) {
        return v.fail(FailureClass::Grasp, reason);
    }
    let cam = &world.scene.layout.camera_pose;
    let center = cam.apply(V::from(cfg.sausage_center));
    let axis = cam.apply_vector(V::from(cfg.sausage_axis).normalized().expect("validated"));
    let down = -world.up;
    let across = world.up.cross(axis).normalized().expect("sausage axis is not vertical");
    let top = center - down * cfg.sausage_radius;
    let target = ExecutionFrame { origin: top, x_axis: across, y_axis: down, z_axis: across.cross(down) };
    let motion = alignment(blade, &target);
    let truth = true_quadruplet(world, 0, 1).map(|k| motion.apply(k));
    let edge = truth[1];
    let y = match (truth[1] - truth[0]).normalized() {
        Some(y) => y,
        None => return v.fail(FailureClass::Execution, "true blade has no width".into()),
    };
    let along = (edge - center).dot(axis);
    let radial = (edge - center).reject_from(axis);
    let contact = (radial.norm() - cfg.sausage_radius).abs();
    let tilt = y.dot(axis).abs().asin().to_degrees();
    let inward = -y.dot(radial.normalized().unwrap_or(down));
    v.note("edge_surface_distance", contact);
    v.note("edge_axial_position", along);
    v.note("blade_tilt_deg", tilt);
    v.note("blade_inward", inward);
    if along.abs() > cfg.sausage_length / 2.0 {
        return v.fail(FailureClass::Execution, format!("edge misses the sausage end by {:.4} m", along.abs() - cfg.sausage_length / 2.0));
    }
    if contact > cfg.cut_contact_tolerance {
        return v.fail(FailureClass::Execution, format!("edge is {contact:.4} m from the sausage surface"));
    }
    if tilt > cfg.cut_angle_tolerance_deg {
        return v.fail(FailureClass::Execution, format!("blade tilted {tilt:.1} deg out of the cut plane"));
    }
    if inward <= 0.0 {
        return v.fail(FailureClass::Execution, "blade spine faces the sausage".into());
    }
    v
}

fn scoop(world: &World, frames: &[ExecutionFrame<f64>], cfg: &SimConfig, mut v: Verdict) -> Verdict {
    let (grasp, scoop, contain) = (&frames[0], &frames[1], &frames[2]);
    if let Err(reason) = jaw_check(world, 0, 0, grasp, cfg, &mut v) {
        return v.fail(FailureClass::Grasp, reason);
    }
    let Shape::Bowl { radius: cavity, wall } = *world.shape(1) else { unreachable!("task 3 scenes hold a bowl") };
    let spoon = world.shape(0);
    let Shape::Spoon { scoop_radius, shell, .. } = *spoon else { unreachable!("task 3 scenes start with a spoon") };
    let rim_center = world.local_point(1, V::new(0.0, 0.0, cavity + wall));
    let lowered = ExecutionFrame { origin: contain.origin - contain.x_axis * cfg.scoop_depth, ..*contain };
    let motion = alignment(scoop, &lowered);
    let spoon_pose = motion.compose(&world.object_pose(0));
    let keypoints = true_quadruplet(world, 0, 1).map(|k| motion.apply(k));
    let bottom = spoon_pose.apply(spoon.scoop_center().expect("spoon") - V::unit_z() * (scoop_radius + shell));
    let reach = cavity - cfg.rim_clearance;
    let widest = keypoints.iter().map(|k| world.horizontal(*k - rim_center).norm()).fold(0.0, f64::max);
    let tip_height = (keypoints[1] - rim_center).dot(world.up);
    let bottom_depth = bottom.distance(rim_center);
    v.note("rim_clearance", cavity - widest);
    v.note("tip_height_above_rim", tip_height);
    v.note("wall_clearance", cavity - bottom_depth);
    if widest > reach {
        return v.fail(FailureClass::Execution, format!("scoop passes {:.4} m from the rim", cavity - widest));
    }
    if bottom_depth > reach {
        return v.fail(FailureClass::Execution, format!("scoop bottom passes {:.4} m from the bowl wall", cavity - bottom_depth));
    }
    if tip_height >= 0.0 {
        return v.fail(FailureClass::Execution, format!("scoop tip stays {tip_height:.4} m above the rim"));
    }
    v
}

fn wrap_grasp(
    world: &World,
    q: &KeypointQuadruplet<f64>,
    frame: &ExecutionFrame<f64>,
    cfg: &SimConfig,
    mut v: Verdict,
) -> Verdict {
    let Shape::Cup { radius, .. } = *world.shape(0) else { unreachable!("task 4 scenes hold a cup") };
    let diameter = 2.0 * radius;
    let width = q[0].distance(q[1]);
    let tilt = frame.y_axis.dot(world.up).abs().asin().to_degrees();
    let surface = world.part_distance(0, 0, frame.origin);
    v.note("grip_width", width);
    v.note("true_diameter", diameter);
    v.note("grip_axis_tilt_deg", tilt);
    v.note("origin_surface_distance", surface);
    if width > cfg.gripper_stroke {
        return v.fail(FailureClass::Grasp, format!("width {width:.4} m exceeds the stroke"));
    }
    if (width - diameter).abs() > cfg.width_tolerance * diameter {
        return v.fail(FailureClass::Grasp, format!("width {width:.4} m against diameter {diameter:.4} m"));
    }
    if tilt > cfg.grip_axis_tolerance_deg {
        return v.fail(FailureClass::Grasp, format!("grip axis tilted {tilt:.1} deg from horizontal"));
    }
    if surface > cfg.grasp_tolerance {
        return v.fail(FailureClass::Grasp, format!("grip origin {surface:.4} m off the body"));
    }
    v
}

/// Where the keypoints of a campaign come from.
#[derive(Debug, Clone, Copy)]
pub enum KeypointSource<'a> {
    Oracle,
    Model { params: &'a ModelParams<f64>, cluster: &'a ClusterConfig },
}

/// One row of campaign statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub task: u8,
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub planning: usize,
    pub grasp: usize,
    pub execution: usize,
}

impl CampaignStats {
    pub const CSV_HEADER: &'static str = "task,#Trials,#Failure,#Planning,#Grasp,#Execution";

    pub fn from_outcomes(task: Task, outcomes: &[TaskOutcome]) -> Self {
        let count = |c: FailureClass| outcomes.iter().filter(|o| o.failure == c).count();
        let successes = count(FailureClass::None);
        CampaignStats {
            task: task.id(),
            trials: outcomes.len(),
            successes,
            failures: outcomes.len() - successes,
            planning: count(FailureClass::Planning),
            grasp: count(FailureClass::Grasp),
            execution: count(FailureClass::Execution),
        }
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.task, self.trials, self.failures, self.planning, self.grasp, self.execution)
    }
}

/// Scene seed for a trial attempt.
pub fn trial_seed(base: u64, trial: usize, attempt: usize) -> u64 {
    base.wrapping_add(1_000 * trial as u64 + attempt as u64)
}

/// A fresh task scene in which every required part is visible.
pub fn task_scene(task: Task, synth: &SynthConfig, base: u64, trial: usize, cfg: &SimConfig) -> Result<Scene, TaskError> {
    for attempt in 0..cfg.max_scene_attempts {
        let seed = trial_seed(base, trial, attempt);
        let scene: Scene = match sample_scene_with(synth, task.categories(), seed) {
            Ok(s) => s,
            Err(SynthError::Crowded { .. } | SynthError::EmptyView) => continue,
            Err(e) => return Err(e.into()),
        };
        if task.required().iter().all(|&(o, p, _)| scene.instance_from(o, p).is_some()) {
            return Ok(scene);
        }
    }
    Err(TaskError::NoScene { task: task.id(), trial, attempts: cfg.max_scene_attempts })
}

/// Keypoints for a scene from the chosen source.
pub fn predict_keypoints(scene: &Scene, source: KeypointSource) -> Result<Vec<(u8, KeypointQuadruplet<f64>)>, TaskError> {
    match source {
        KeypointSource::Oracle => Ok(oracle_predictions(scene)),
        KeypointSource::Model { params, cluster } => {
            let pred = forward(&scene.cloud, params)?;
            let instances = extract_quadruplets(&scene.cloud, &pred.labels(), pred.offsets.view(), cluster)?;
            Ok(predictions_from_instances(&instances))
        }
    }
}

/// Runs `trials` fresh scenes of one task.
pub fn run_campaign(
    task: Task,
    trials: usize,
    base_seed: u64,
    source: KeypointSource,
    synth: &SynthConfig,
    cfg: &SimConfig,
) -> Result<(CampaignStats, Vec<TaskOutcome>), TaskError> {
    cfg.validate()?;
    let mut outcomes = Vec::with_capacity(trials);
    for trial in 0..trials {
        let scene = task_scene(task, synth, base_seed, trial, cfg)?;
        let predictions = predict_keypoints(&scene, source)?;
        let mut outcome = simulate_task(task, &scene, &predictions, cfg)?;
        outcome.trial = trial;
        log::debug!("task {task} trial {trial}: {:?}", outcome.failure);
        outcomes.push(outcome);
    }
    Ok((CampaignStats::from_outcomes(task, &outcomes), outcomes))
}
