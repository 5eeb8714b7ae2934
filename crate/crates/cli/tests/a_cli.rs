use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use affkp_pipeline::manifest::{RunManifest, MANIFEST_FILE};
use affkp_core::io::{list_scene_dirs, write_checkpoint};
use affkp_core::metrics::MetricsReport;
use affkp_core::model::ModelParams;
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_affkp"));
    c.env("AFFKP_LOG", "warn");
    c
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn small_config(scenes: usize, epochs: usize) -> Value {
    json!({
        "seed": 7,
        "data": { "scenes": scenes },
        "synth": {},
        "loss": { "epochs": epochs },
        "training": { "checkpoint_every": 1 },
        "campaign": { "source": "oracle", "trials": 3 },
        "paths": {
            "dataset": "data",
            "train_data": "data",
            "eval_data": "data",
            "run": "run",
            "checkpoint": "run/model.ckpt",
            "predictions": "pred",
            "report": "eval",
            "frames": "frames",
            "simulation": "sim",
            "validation": "valid"
        }
    })
}

fn run(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    bin().arg(cmd).arg("--config").arg(config).args(extra).output().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "status {:?}, stderr:\n{}", out.status, String::from_utf8_lossy(&out.stderr));
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != MANIFEST_FILE {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_is_deterministic_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(3, 1));
    assert_ok(&run("generate", &cfg, &[]));
    let again = tmp.path().join("again");
    assert_ok(&run("generate", &cfg, &["--out", again.to_str().unwrap()]));
    assert_eq!(tree(&tmp.path().join("data")), tree(&again));
    let seeds: Vec<u64> = list_scene_dirs(&again).unwrap().into_iter().map(|(s, _)| s).collect();
    assert_eq!(seeds, vec![7, 8, 9]);

    assert_ok(&run("validate", &cfg, &[]));
    let m: RunManifest = serde_json::from_slice(&fs::read(tmp.path().join("valid").join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.command, "validate");
    assert_eq!(m.seed, 7);
    assert!(m.input_sha256.is_some());
}

#[test]
fn seed_override_changes_scene_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(2, 1));
    assert_ok(&run("generate", &cfg, &["--seed", "40"]));
    let seeds: Vec<u64> = list_scene_dirs(&tmp.path().join("data")).unwrap().into_iter().map(|(s, _)| s).collect();
    assert_eq!(seeds, vec![40, 41]);
}

#[test]
fn zero_scenes_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(0, 1));
    assert_eq!(run("generate", &cfg, &[]).status.code(), Some(2));
}

#[test]
fn unknown_key_and_missing_file_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = small_config(1, 1);
    v["loss"]["epochz"] = json!(3);
    let cfg = write_config(tmp.path(), &v);
    assert_eq!(run("generate", &cfg, &[]).status.code(), Some(2));
    assert_eq!(run("generate", &tmp.path().join("nope.json"), &[]).status.code(), Some(2));
}

#[test]
fn corrupted_scene_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(2, 1));
    assert_ok(&run("generate", &cfg, &[]));
    let (_, dir) = &list_scene_dirs(&tmp.path().join("data")).unwrap()[0];
    let labels = dir.join(affkp_core::io::LABELS_FILE);
    let mut bytes = fs::read(&labels).unwrap();
    bytes.truncate(bytes.len() - 1);
    fs::write(&labels, bytes).unwrap();
    assert_eq!(run("validate", &cfg, &[]).status.code(), Some(3));
}

#[test]
fn missing_predictions_are_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(1, 1));
    assert_ok(&run("generate", &cfg, &[]));
    assert_eq!(run("evaluate", &cfg, &[]).status.code(), Some(3));
}

#[test]
fn incompatible_checkpoint_is_a_model_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(1, 1));
    assert_ok(&run("generate", &cfg, &[]));
    let mut other = affkp_core::model::ModelConfig::default();
    other.feature_dim += 8;
    let params = ModelParams::<f32>::zeros(&other);
    fs::create_dir_all(tmp.path().join("run")).unwrap();
    write_checkpoint(&tmp.path().join("run/model.ckpt"), &params.to_tensors()).unwrap();
    assert_eq!(run("predict", &cfg, &[]).status.code(), Some(4));
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(2, 2));
    for cmd in ["generate", "validate", "train", "predict", "evaluate", "interpret", "simulate"] {
        assert_ok(&run(cmd, &cfg, &[]));
    }
    let t = tmp.path();
    for dir in ["data", "valid", "run", "pred", "eval", "frames", "sim"] {
        assert!(t.join(dir).join(MANIFEST_FILE).is_file(), "{dir} has no manifest");
    }
    let loss = fs::read_to_string(t.join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,semantic,keypoint,multitask"));
    assert_eq!(loss.lines().count(), 3);
    assert!(t.join("run/checkpoints/epoch_00001.ckpt").is_file());
    assert!(t.join("run/checkpoints/epoch_00002.ckpt").is_file());

    let report: MetricsReport = serde_json::from_slice(&fs::read(t.join("eval/report.json")).unwrap()).unwrap();
    assert!(!report.to_csv().is_empty());
    let campaign = fs::read_to_string(t.join("sim/campaign.csv")).unwrap();
    let lines: Vec<&str> = campaign.lines().collect();
    assert_eq!(lines[0], "task,#Trials,#Failure,#Planning,#Grasp,#Execution");
    assert_eq!(lines.len(), 5);
    assert_eq!(fs::read_to_string(t.join("sim/outcomes.jsonl")).unwrap().lines().count(), 12);
    let frames: Value = serde_json::from_slice(&fs::read(t.join("frames/frames.json")).unwrap()).unwrap();
    assert!(frames.is_array());
}

#[test]
fn readme_config_loads() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```json\n").unwrap() + "```json\n".len();
    let len = readme[start..].find("```").unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cfg.json");
    fs::write(&path, &readme[start..start + len]).unwrap();
    let cfg = affkp_pipeline::PipelineConfig::load(&path, Some(3)).unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.paths.dataset, tmp.path().join("data/train"));
}

/// Parses `bytes` as `T` and checks that writing it back reproduces them.
fn round_trips<T: serde::Serialize + serde::de::DeserializeOwned>(path: &Path) {
    let value: T = affkp_core::io::read_json(path).unwrap();
    let copy = path.with_extension("copy");
    affkp_core::io::write_json(&copy, &value).unwrap();
    assert_eq!(fs::read(path).unwrap(), fs::read(&copy).unwrap(), "{}", path.display());
}

#[test]
fn twenty_scene_chain_emits_well_formed_artifacts() {
    use affkp_pipeline::commands::{FrameRecord, TrainSummary};
    use affkp_pipeline::validate::SceneCheck;
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(20, 2));
    let start = std::time::Instant::now();
    for cmd in ["generate", "validate", "train", "predict", "evaluate", "interpret"] {
        assert_ok(&run(cmd, &cfg, &[]));
    }
    eprintln!("20-scene generate..interpret: {:.1?}", start.elapsed());
    let t = tmp.path();
    assert_eq!(list_scene_dirs(&t.join("pred")).unwrap().len(), 20);
    let report: MetricsReport = serde_json::from_slice(&fs::read(t.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.scenes, 20);
    for row in &report.per_affordance {
        if let Some(f) = row.f_measure {
            assert!((0.0..=1.0).contains(&f));
        }
        if let Some(p) = row.pck {
            assert!((0.0..=100.0).contains(&p));
        }
        assert!(row.nmse.is_none_or(|n| n >= 0.0));
    }
    let csv = fs::read_to_string(t.join("eval/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    round_trips::<MetricsReport>(&t.join("eval/report.json"));
    round_trips::<Vec<FrameRecord>>(&t.join("frames/frames.json"));
    round_trips::<Vec<SceneCheck>>(&t.join("valid/validation.json"));
    round_trips::<TrainSummary>(&t.join("run/summary.json"));
    round_trips::<affkp_pipeline::PipelineConfig>(&t.join("run/config.json"));
    round_trips::<RunManifest>(&t.join("eval").join(MANIFEST_FILE));
    let (_, first) = &list_scene_dirs(&t.join("pred")).unwrap()[0];
    round_trips::<Vec<affkp_core::instance::InstanceRecord<f32>>>(&first.join("instances.json"));
}

#[test]
fn ground_truth_evaluated_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config(3, 1));
    assert_ok(&run("generate", &cfg, &[]));
    for (seed, dir) in list_scene_dirs(&tmp.path().join("data")).unwrap() {
        let scene: affkp_core::Scene = affkp_core::io::read_scene(&dir).unwrap();
        let target = tmp.path().join("pred").join(affkp_core::io::scene_dir_name(seed));
        fs::create_dir_all(&target).unwrap();
        fs::copy(dir.join("instances.json"), target.join("instances.json")).unwrap();
        let scores: Vec<Vec<f64>> = scene.labels.iter().map(|&l| (0..7).map(|c| (c == l as usize) as u8 as f64).collect()).collect();
        fs::write(target.join("scores.json"), serde_json::to_vec(&scores).unwrap()).unwrap();
    }
    assert_ok(&run("evaluate", &cfg, &[]));
    let report: MetricsReport = serde_json::from_slice(&fs::read(tmp.path().join("eval/report.json")).unwrap()).unwrap();
    let mut present = 0;
    for row in report.per_affordance.iter().filter(|r| r.c_aff > 0) {
        present += 1;
        assert_eq!(row.f_measure, Some(1.0), "{}", row.affordance);
        assert_eq!(row.nmse, Some(0.0));
        assert_eq!(row.pck, Some(100.0));
    }
    assert!(present > 0);
}

#[test]
fn all_commands_share_one_flag_set() {
    use clap::Parser;
    for cmd in ["generate", "train", "predict", "evaluate", "interpret", "simulate", "validate"] {
        let cli = affkp_pipeline::Cli::try_parse_from(["affkp", cmd, "--config", "c.json", "--seed", "4", "--out", "o"]).unwrap();
        assert_eq!(cli.command.name(), cmd);
        assert_eq!(cli.command.args().seed, Some(4));
    }
    assert!(affkp_pipeline::Cli::try_parse_from(["affkp", "train"]).is_err());
    assert_eq!(bin().arg("bogus").output().unwrap().status.code(), Some(2));
}
