use affkp_core::losses::LossConfig;
use affkp_core::model::{init_params, ModelConfig};
use affkp_core::synth::{sample_scene, SynthConfig};
use affkp_core::train::{train, training_sample, TrainError, TrainingSample};
use affkp_core::SceneF32;

fn samples(seeds: std::ops::Range<u64>) -> Vec<TrainingSample<f32>> {
    seeds
        .map(|s| {
            let scene: SceneF32 = sample_scene(&SynthConfig::default(), s).unwrap();
            training_sample(&scene)
        })
        .collect()
}

#[test]
fn zero_learning_rate_keeps_initial_params() {
    let data = samples(0..2);
    let mc = ModelConfig::default();
    let cfg = LossConfig { learning_rate: 0.0, epochs: 3, ..LossConfig::default() };
    let out = train(&data, &mc, &cfg, 4, |_, _, _| {}).unwrap();
    assert_eq!(out.params, init_params(&mc, 4).unwrap());
    assert_eq!(out.history.len(), 3);
    assert_eq!(out.initial, out.final_report);
}

#[test]
fn same_seed_gives_identical_runs() {
    let data = samples(10..13);
    let mc = ModelConfig::default();
    let cfg = LossConfig { epochs: 3, ..LossConfig::default() };
    let a = train(&data, &mc, &cfg, 9, |_, _, _| {}).unwrap();
    let b = train(&data, &mc, &cfg, 9, |_, _, _| {}).unwrap();
    assert_eq!(a.params.to_tensors(), b.params.to_tensors());
    assert_eq!(a.history, b.history);
}

#[test]
fn one_scene_for_two_hundred_epochs_cuts_the_loss_fivefold() {
    let data = samples(21..22);
    let cfg = LossConfig::default();
    let out = train(&data, &ModelConfig::default(), &cfg, 1, |_, _, _| {}).unwrap();
    let ratio = out.final_report.multitask_loss / out.initial.multitask_loss;
    eprintln!("single-scene loss ratio after {} epochs: {ratio:.4}", cfg.epochs);
    assert!(ratio < 0.2, "{ratio}");
    for r in &out.history {
        let recomposed = r.keypoint_loss + cfg.lambda_weight * r.semantic_loss;
        assert!((r.multitask_loss - recomposed).abs() <= 1e-9 * r.multitask_loss.abs().max(1.0));
        // per-class terms are accumulated in f32
        let class_total: f64 = r.per_class.iter().sum();
        assert!((class_total - r.semantic_loss).abs() <= 1e-5 * r.semantic_loss.max(1e-3));
    }
}

#[test]
fn runaway_learning_rate_aborts_with_the_last_good_params() {
    let data = samples(30..31);
    let cfg = LossConfig { learning_rate: 1e6, epochs: 50, ..LossConfig::default() };
    match train(&data, &ModelConfig::default(), &cfg, 2, |_, _, _| {}) {
        Err(TrainError::Diverged { epoch, last_good, history, .. }) => {
            assert!(epoch >= 1);
            assert_eq!(history.len(), epoch - 1);
            assert!(!last_good.is_empty());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.final_report)),
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let err = train::<f32>(&[], &ModelConfig::default(), &LossConfig::default(), 0, |_, _, _| {});
    assert!(matches!(err, Err(TrainError::EmptyDataset)));
}
