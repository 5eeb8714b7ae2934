use affkp_core::frames::{frame_from_quadruplet, FrameError};
use affkp_core::instance::KeypointQuadruplet;
use affkp_core::labels::Affordance;
use affkp_core::synth::{Shape, SynthConfig};
use affkp_core::tasks::{
    oracle_predictions, run_campaign, simulate_task, task_scene, CampaignStats, FailureClass, KeypointSource,
    SimConfig, Task,
};
use affkp_core::{Mat3, Scene, Vec3};
use proptest::prelude::*;

type V = Vec3<f64>;

const TRIALS: usize = 30;

fn scene_for(task: Task, trial: usize) -> Scene {
    task_scene(task, &SynthConfig::default(), 9_000, trial, &SimConfig::default()).unwrap()
}

fn replace(
    preds: &[(u8, KeypointQuadruplet<f64>)],
    truth: &KeypointQuadruplet<f64>,
    with: KeypointQuadruplet<f64>,
) -> Vec<(u8, KeypointQuadruplet<f64>)> {
    preds.iter().map(|(l, q)| (*l, if q == truth { with } else { *q })).collect()
}

#[test]
fn oracle_keypoints_succeed_on_every_task() {
    let synth = SynthConfig::default();
    let cfg = SimConfig::default();
    for task in Task::ALL {
        let (stats, outcomes) = run_campaign(task, TRIALS, 9_000, KeypointSource::Oracle, &synth, &cfg).unwrap();
        for o in outcomes.iter().filter(|o| !o.success) {
            eprintln!("task {} trial {}: {:?} {:?} {:?}", o.task, o.trial, o.failure, o.reason, o.diagnostics);
        }
        assert_eq!(stats.successes, TRIALS, "task {task}");
        assert_eq!(stats.failures, stats.planning + stats.grasp + stats.execution);
    }
}

#[test]
fn doubled_wrap_width_is_a_grasp_failure() {
    let cfg = SimConfig::default();
    for trial in 0..TRIALS {
        let scene = scene_for(Task::WrapGrasp, trial);
        let preds = oracle_predictions(&scene);
        let truth = scene.instance_from(0, 0).unwrap().keypoints;
        let mid = (truth[0] + truth[1]) / 2.0;
        let mut wide = truth;
        wide[0] = mid + (truth[0] - mid) * 2.0;
        wide[1] = mid + (truth[1] - mid) * 2.0;
        let out = simulate_task(Task::WrapGrasp, &scene, &replace(&preds, &truth, wide), &cfg).unwrap();
        assert_eq!(out.failure, FailureClass::Grasp, "trial {trial}: {:?}", out.reason);
        assert!(!out.success);
    }
}

/// Horizontal offset of the released tomato centre from the bowl axis,
/// computed straight from the layout.
fn landing_vector(scene: &Scene, grasp: &KeypointQuadruplet<f64>, contain: &KeypointQuadruplet<f64>, drop: f64) -> V {
    let cam = &scene.layout.camera_pose;
    let up = cam.apply_vector(V::unit_z());
    let (tomato, bowl) = (&scene.layout.objects[0], &scene.layout.objects[1]);
    let Shape::Tomato { radius } = tomato.shape else { panic!("tomato first") };
    let Shape::Bowl { radius: inner, wall } = bowl.shape else { panic!("bowl second") };
    let centre = cam.apply(tomato.pose.apply(V::new(0.0, 0.0, radius)));
    let rim = cam.apply(bowl.pose.apply(V::new(0.0, 0.0, inner + wall)));
    let g = frame_from_quadruplet(grasp, Affordance::Grasp.label()).unwrap();
    let c = frame_from_quadruplet(contain, Affordance::Contain.label()).unwrap();
    let release = c.origin + c.x_axis * drop + (centre - g.origin);
    let d = release - rim;
    d - up * d.dot(up)
}

#[test]
fn contain_origin_pushed_past_the_cavity_wall_flips_task_one() {
    let cfg = SimConfig::default();
    for trial in 0..5 {
        let scene = scene_for(Task::PickPlace, trial);
        let Shape::Bowl { radius: inner, .. } = scene.layout.objects[1].shape else { panic!() };
        let preds = oracle_predictions(&scene);
        let grasp = scene.instance_from(0, 0).unwrap().keypoints;
        let contain = scene.instance_from(1, 0).unwrap().keypoints;
        let base = landing_vector(&scene, &grasp, &contain, cfg.drop_height);
        let up = scene.layout.camera_pose.apply_vector(V::unit_z());
        let dir = base.normalized().unwrap_or_else(|| up.cross(V::unit_x()).normalized().unwrap());
        for (margin, expect) in [(0.001, FailureClass::Execution), (-0.001, FailureClass::None)] {
            let shift = dir * (inner + margin - base.norm());
            let moved = contain.map(|k| k + shift);
            let landing = landing_vector(&scene, &grasp, &moved, cfg.drop_height).norm();
            assert!((landing - (inner + margin)).abs() < 1e-9);
            let out = simulate_task(Task::PickPlace, &scene, &replace(&preds, &contain, moved), &cfg).unwrap();
            assert_eq!(out.failure, expect, "trial {trial} margin {margin}: {:?}", out.reason);
            assert!((out.diagnostics["landing_offset"] - landing).abs() < 1e-9);
        }
    }
}

#[test]
fn reversed_blade_is_an_execution_failure() {
    let cfg = SimConfig::default();
    for trial in 0..5 {
        let scene = scene_for(Task::Cut, trial);
        let preds = oracle_predictions(&scene);
        let cut = scene.instance_from(0, 1).unwrap().keypoints;
        let flipped = [cut[1], cut[0], cut[2], cut[3]];
        let out = simulate_task(Task::Cut, &scene, &replace(&preds, &cut, flipped), &cfg).unwrap();
        assert_eq!(out.failure, FailureClass::Execution, "{:?}", out.reason);
    }
}

#[test]
fn scoop_pushed_onto_the_rim_is_an_execution_failure() {
    let cfg = SimConfig::default();
    let scene = scene_for(Task::Scoop, 0);
    let preds = oracle_predictions(&scene);
    let contain = scene.instance_from(1, 0).unwrap().keypoints;
    let Shape::Bowl { radius, .. } = scene.layout.objects[1].shape else { panic!() };
    let up = scene.layout.camera_pose.apply_vector(V::unit_z());
    let side = up.cross(V::unit_x()).normalized().unwrap();
    let moved = contain.map(|k| k + side * radius);
    let out = simulate_task(Task::Scoop, &scene, &replace(&preds, &contain, moved), &cfg).unwrap();
    assert_eq!(out.failure, FailureClass::Execution, "{:?}", out.reason);
}

#[test]
fn missing_or_degenerate_predictions_are_planning_failures() {
    let cfg = SimConfig::default();
    for task in Task::ALL {
        let scene = scene_for(task, 1);
        let out = simulate_task(task, &scene, &[], &cfg).unwrap();
        assert_eq!(out.failure, FailureClass::Planning);
        assert!(out.reason.unwrap().contains("prediction"));
    }
    let scene = scene_for(Task::WrapGrasp, 1);
    let preds = oracle_predictions(&scene);
    let truth = scene.instance_from(0, 0).unwrap().keypoints;
    let collapsed = [truth[0], truth[0], truth[2], truth[3]];
    let out = simulate_task(Task::WrapGrasp, &scene, &replace(&preds, &truth, collapsed), &cfg).unwrap();
    assert_eq!(out.failure, FailureClass::Planning);
    assert!(out.reason.unwrap().contains("kp1 and kp2"));
}

#[test]
fn campaigns_are_deterministic_and_rows_add_up() {
    let synth = SynthConfig::default();
    let cfg = SimConfig::default();
    let a = run_campaign(Task::Cut, 6, 77, KeypointSource::Oracle, &synth, &cfg).unwrap();
    let b = run_campaign(Task::Cut, 6, 77, KeypointSource::Oracle, &synth, &cfg).unwrap();
    assert_eq!(a, b);
    let row = a.0.csv_row();
    assert_eq!(row.split(',').count(), CampaignStats::CSV_HEADER.split(',').count());
    assert!(row.starts_with("2,6,"));
}

#[test]
fn bad_sim_config_is_rejected() {
    let cfg = SimConfig { gripper_stroke: -1.0, ..SimConfig::default() };
    assert!(cfg.validate().is_err());
    let cfg = SimConfig { sausage_axis: [0.0, 0.0, 1.0], ..SimConfig::default() };
    assert!(cfg.validate().is_err());
    assert!(Task::from_id(0).is_err() && Task::from_id(5).is_err());
    assert_eq!(Task::from_id(3).unwrap(), Task::Scoop);
}

fn vec3() -> impl Strategy<Value = V> {
    (-0.5..0.5f64, -0.5..0.5f64, 0.1..1.0f64).prop_map(|(x, y, z)| V::new(x, y, z))
}

fn quadruplet() -> impl Strategy<Value = KeypointQuadruplet<f64>> {
    [vec3(), vec3(), vec3(), vec3()]
}

fn rotation() -> impl Strategy<Value = Mat3<f64>> {
    (vec3(), 0.0..std::f64::consts::TAU).prop_map(|(axis, angle)| Mat3::rotation(axis.normalized().unwrap(), angle))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn frames_are_right_handed_and_orthonormal(q in quadruplet(), label in 1u8..=6) {
        match frame_from_quadruplet(&q, label) {
            Ok(f) => prop_assert!(f.orthonormality_error() < 1e-9),
            Err(FrameError::Collapsed(..) | FrameError::Parallel(..)) => {}
            Err(e) => prop_assert!(false, "{}", e),
        }
    }

    #[test]
    fn frames_follow_rigid_motions(q in quadruplet(), label in 1u8..=6, r in rotation(), t in vec3()) {
        let Ok(f) = frame_from_quadruplet(&q, label) else { return Ok(()) };
        let rotated = frame_from_quadruplet(&q.map(|k| r.mul_vec(k)), label).unwrap();
        for (a, b) in [(f.x_axis, rotated.x_axis), (f.y_axis, rotated.y_axis), (f.z_axis, rotated.z_axis), (f.origin, rotated.origin)] {
            prop_assert!(r.mul_vec(a).distance(b) < 1e-9);
        }
        let moved = frame_from_quadruplet(&q.map(|k| k + t), label).unwrap();
        prop_assert!(moved.origin.distance(f.origin + t) < 1e-6);
        for (a, b) in [(f.x_axis, moved.x_axis), (f.y_axis, moved.y_axis), (f.z_axis, moved.z_axis)] {
            prop_assert!(a.distance(b) < 1e-6);
        }
    }
}
