//! One function per subcommand. Each loads its inputs, calls into the core
//! library and writes its artifacts plus a manifest into one directory.

use std::fs;
use std::path::{Path, PathBuf};

use affkp_core::frames::{frame_from_quadruplet, ExecutionFrame};
use affkp_core::instance::InstanceRecord;
use affkp_core::io::{
    list_scene_dirs, read_checkpoint, read_instances, read_json, read_scene, scene_dir_name,
    write_checkpoint, write_instances, write_json, write_labels, write_scene, IoError, LABELS_FILE, INSTANCES_FILE,
};
use affkp_core::labels::{Affordance, NUM_CLASSES};
use affkp_core::losses::LossReport;
use affkp_core::metrics::{evaluate as evaluate_metrics, MetricsReport, SceneEvaluation};
use affkp_core::model::{forward, ModelParams};
use affkp_core::synth::{sample_scene, SceneGroundTruth, SynthError};
use affkp_core::tasks::{run_campaign, CampaignStats, KeypointSource, Task};
use affkp_core::train::{train as train_model, training_sample, TrainError};
use affkp_core::vote::extract_quadruplets;
use affkp_core::{Scalar, Scene};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{KeypointSourceKind, PipelineConfig};
use crate::error::CliError;
use crate::manifest::ManifestBuilder;
use crate::validate::{check_scene, SceneCheck};

pub const SCORES_FILE: &str = "scores.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const RUN_CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const DIVERGED_FILE: &str = "diverged.ckpt";
pub const TRAIN_SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const FRAMES_FILE: &str = "frames.json";
pub const CAMPAIGN_FILE: &str = "campaign.csv";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const VALIDATION_FILE: &str = "validation.json";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

/// Compact JSON with a trailing newline, for large arrays.
fn write_compact_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec(value).map_err(CliError::output)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn read_dataset<T: Scalar>(root: &Path) -> Result<Vec<SceneGroundTruth<T>>, CliError> {
    let dirs = list_scene_dirs(root).map_err(CliError::input)?;
    if dirs.is_empty() {
        return Err(CliError::Data(format!("{}: no scene_<seed> directories", root.display())));
    }
    dirs.iter().map(|(_, d)| read_scene(d).map_err(CliError::input)).collect()
}

/// Checkpoint under the configured model shape. A missing file is a data
/// error; an unreadable or mismatched one is a model error.
pub fn load_params(cfg: &PipelineConfig) -> Result<ModelParams<f32>, CliError> {
    let path = &cfg.paths.checkpoint;
    let tensors = read_checkpoint(path).map_err(|e| match e {
        IoError::Io { .. } => CliError::Data(e.to_string()),
        other => CliError::Model(other.to_string()),
    })?;
    Ok(ModelParams::from_tensors(&cfg.model, &tensors)?)
}

/// Seeds tried per requested scene before `generate` gives up.
pub const SEED_DRAWS_PER_SCENE: usize = 10;

/// Writes `data.scenes` scenes using seeds `seed`, `seed + 1`, ...; seeds
/// whose layout cannot be placed or sees no object are skipped.
pub fn generate(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let manifest = ManifestBuilder::start("generate", cfg, &[])?;
    create_dir(out)?;
    let wanted = cfg.data.scenes;
    let (mut written, mut draws) = (0, 0);
    while written < wanted {
        if draws == wanted * SEED_DRAWS_PER_SCENE {
            return Err(CliError::Data(format!("only {written} of {wanted} scenes placeable in {draws} seeds")));
        }
        let seed = cfg.seed.wrapping_add(draws as u64);
        draws += 1;
        let scene: Scene = match sample_scene(&cfg.synth, seed) {
            Ok(s) => s,
            Err(e @ (SynthError::Crowded { .. } | SynthError::EmptyView)) => {
                log::warn!("skipping seed {seed}: {e}");
                continue;
            }
            Err(SynthError::InvalidConfig(e)) => return Err(CliError::Config(format!("synth: {e}"))),
            Err(e) => return Err(CliError::Internal(format!("scene {seed}: {e}"))),
        };
        write_scene(&out.join(scene_dir_name(seed)), &scene).map_err(CliError::output)?;
        log::debug!("scene {seed}: {} points, {} instances", scene.cloud.len(), scene.instances.len());
        written += 1;
    }
    log::info!("wrote {written} scenes to {}", out.display());
    manifest.finish(out)?;
    Ok(())
}

pub fn validate(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let root = &cfg.paths.dataset;
    let manifest = ManifestBuilder::start("validate", cfg, &[root])?;
    let dirs = list_scene_dirs(root).map_err(CliError::input)?;
    if dirs.is_empty() {
        return Err(CliError::Data(format!("{}: no scene_<seed> directories", root.display())));
    }
    let checks: Vec<SceneCheck> = dirs
        .iter()
        .map(|(seed, dir)| match read_scene::<f64>(dir) {
            Ok(scene) => check_scene(&scene),
            Err(e) => SceneCheck { seed: *seed, points: 0, instances: 0, problems: vec![e.to_string()] },
        })
        .collect();
    let bad: Vec<&SceneCheck> = checks.iter().filter(|c| !c.problems.is_empty()).collect();
    create_dir(out)?;
    write_json(&out.join(VALIDATION_FILE), &checks).map_err(CliError::output)?;
    manifest.finish(out)?;
    for c in &bad {
        for p in &c.problems {
            log::warn!("scene {}: {p}", c.seed);
        }
    }
    if bad.is_empty() {
        log::info!("{} scenes valid", checks.len());
        Ok(())
    } else {
        Err(CliError::Data(format!("{} of {} scenes violate dataset invariants", bad.len(), checks.len())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub scenes: usize,
    pub epochs: usize,
    pub initial: LossReport,
    pub final_report: LossReport,
    pub loss_ratio: f64,
}

fn loss_row(epoch: usize, r: &LossReport) -> String {
    format!("{epoch},{},{},{}\n", r.semantic_loss, r.keypoint_loss, r.multitask_loss)
}

pub fn train(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let data = &cfg.paths.train_data;
    let manifest = ManifestBuilder::start("train", cfg, &[data])?;
    let scenes = read_dataset::<f32>(data)?;
    let samples: Vec<_> = scenes.iter().map(training_sample).collect();
    create_dir(&out.join(CHECKPOINT_DIR))?;
    write_json(&out.join(RUN_CONFIG_FILE), cfg).map_err(CliError::output)?;
    let mut csv = String::from("epoch,semantic,keypoint,multitask\n");
    let mut write_error = None;
    let every = cfg.training.checkpoint_every;
    let result = train_model(&samples, &cfg.model, &cfg.loss, cfg.seed, |epoch, params, report| {
        csv.push_str(&loss_row(epoch, report));
        log::info!("epoch {epoch}: multitask {:.6}", report.multitask_loss);
        if every > 0 && epoch % every == 0 && write_error.is_none() {
            let path = out.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:05}.ckpt"));
            write_error = write_checkpoint(&path, &params.to_tensors()).err();
        }
    });
    write_text(&out.join(LOSS_FILE), &csv)?;
    if let Some(e) = write_error {
        return Err(CliError::output(e));
    }
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, loss, last_good, .. }) => {
            write_checkpoint(&out.join(DIVERGED_FILE), &last_good).map_err(CliError::output)?;
            manifest.finish(out)?;
            return Err(CliError::Model(format!(
                "training diverged in epoch {epoch} (loss {loss}); last good parameters in {DIVERGED_FILE}"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    write_checkpoint(&out.join(MODEL_FILE), &outcome.params.to_tensors()).map_err(CliError::output)?;
    let summary = TrainSummary {
        scenes: samples.len(),
        epochs: cfg.loss.epochs,
        loss_ratio: outcome.final_report.multitask_loss / outcome.initial.multitask_loss,
        initial: outcome.initial,
        final_report: outcome.final_report,
    };
    write_json(&out.join(TRAIN_SUMMARY_FILE), &summary).map_err(CliError::output)?;
    log::info!("trained on {} scenes; loss ratio {:.4}", summary.scenes, summary.loss_ratio);
    manifest.finish(out)?;
    Ok(())
}

pub fn predict(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let data = &cfg.paths.eval_data;
    let manifest = ManifestBuilder::start("predict", cfg, &[data, &cfg.paths.checkpoint])?;
    let params = load_params(cfg)?;
    let dirs = list_scene_dirs(data).map_err(CliError::input)?;
    if dirs.is_empty() {
        return Err(CliError::Data(format!("{}: no scene_<seed> directories", data.display())));
    }
    create_dir(out)?;
    for (seed, dir) in &dirs {
        let scene = read_scene::<f32>(dir).map_err(CliError::input)?;
        let pred = forward(&scene.cloud, &params)?;
        let labels = pred.labels();
        let instances = extract_quadruplets(&scene.cloud, &labels, pred.offsets.view(), &cfg.cluster)?;
        let target = out.join(scene_dir_name(*seed));
        create_dir(&target)?;
        let records: Vec<InstanceRecord<f32>> = instances.iter().map(|i| i.to_record()).collect();
        write_instances(&target.join(INSTANCES_FILE), &records).map_err(CliError::output)?;
        write_labels(&target.join(LABELS_FILE), &labels).map_err(CliError::output)?;
        let scores: Vec<Vec<f32>> = pred.scores.rows().into_iter().map(|r| r.to_vec()).collect();
        write_compact_json(&target.join(SCORES_FILE), &scores)?;
        log::info!("scene {seed}: {} instances", records.len());
    }
    manifest.finish(out)?;
    Ok(())
}

fn read_scores(path: &Path, points: usize) -> Result<Array2<f64>, CliError> {
    let rows: Vec<Vec<f64>> = read_json(path).map_err(CliError::input)?;
    if rows.len() != points || rows.iter().any(|r| r.len() != NUM_CLASSES) {
        return Err(CliError::Data(format!("{}: expected {points} rows of {NUM_CLASSES} scores", path.display())));
    }
    Ok(Array2::from_shape_fn((points, NUM_CLASSES), |(i, c)| rows[i][c]))
}

pub fn evaluate(cfg: &PipelineConfig, out: &Path) -> Result<MetricsReport, CliError> {
    let (data, preds) = (&cfg.paths.eval_data, &cfg.paths.predictions);
    let manifest = ManifestBuilder::start("evaluate", cfg, &[data, preds])?;
    let scenes = read_dataset::<f64>(data)?;
    let mut predicted = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let dir = preds.join(scene_dir_name(scene.seed));
        if !dir.is_dir() {
            return Err(CliError::Data(format!("no predictions for scene {} in {}", scene.seed, preds.display())));
        }
        let instances: Vec<InstanceRecord<f64>> = read_instances(&dir.join(INSTANCES_FILE)).map_err(CliError::input)?;
        let scores = read_scores(&dir.join(SCORES_FILE), scene.cloud.len())?;
        predicted.push((instances, scores));
    }
    let evals: Vec<SceneEvaluation<f64>> = scenes
        .iter()
        .zip(&predicted)
        .map(|(s, (inst, scores))| SceneEvaluation {
            xyz: &s.cloud.xyz,
            gt_labels: &s.labels,
            gt_instances: &s.instances,
            scores: scores.view(),
            predictions: inst,
        })
        .collect();
    let report = evaluate_metrics(&evals, &cfg.eval)?;
    create_dir(out)?;
    write_json(&out.join(REPORT_FILE), &report).map_err(CliError::output)?;
    write_text(&out.join(METRICS_CSV_FILE), &report.to_csv())?;
    log::info!("macro averages: {:?}", report.macro_average);
    manifest.finish(out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub scene: u64,
    pub instance: usize,
    pub affordance: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<ExecutionFrame<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn interpret(cfg: &PipelineConfig, out: &Path) -> Result<Vec<FrameRecord>, CliError> {
    let preds = &cfg.paths.predictions;
    let manifest = ManifestBuilder::start("interpret", cfg, &[preds])?;
    let dirs = list_scene_dirs(preds).map_err(CliError::input)?;
    if dirs.is_empty() {
        return Err(CliError::Data(format!("{}: no scene_<seed> directories", preds.display())));
    }
    let mut records = Vec::new();
    for (seed, dir) in &dirs {
        let instances: Vec<InstanceRecord<f64>> = read_instances(&dir.join(INSTANCES_FILE)).map_err(CliError::input)?;
        for inst in &instances {
            let name = Affordance::from_label(inst.affordance).map_or("unknown", |a| a.name()).to_string();
            let (frame, error) = match frame_from_quadruplet(&inst.keypoints, inst.affordance) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            records.push(FrameRecord { scene: *seed, instance: inst.id, affordance: name, label: inst.affordance, frame, error });
        }
    }
    create_dir(out)?;
    write_json(&out.join(FRAMES_FILE), &records).map_err(CliError::output)?;
    log::info!("{} frames, {} degenerate", records.len(), records.iter().filter(|r| r.error.is_some()).count());
    manifest.finish(out)?;
    Ok(records)
}

pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<Vec<CampaignStats>, CliError> {
    let inputs: Vec<&Path> = match cfg.campaign.source {
        KeypointSourceKind::Model => vec![cfg.paths.checkpoint.as_path()],
        KeypointSourceKind::Oracle => vec![],
    };
    let manifest = ManifestBuilder::start("simulate", cfg, &inputs)?;
    let params = match cfg.campaign.source {
        KeypointSourceKind::Model => Some(load_params(cfg)?.cast::<f64>()),
        KeypointSourceKind::Oracle => None,
    };
    let source = match &params {
        Some(p) => KeypointSource::Model { params: p, cluster: &cfg.cluster },
        None => KeypointSource::Oracle,
    };
    let mut csv = format!("{}\n", CampaignStats::CSV_HEADER);
    let mut jsonl = String::new();
    let mut rows = Vec::new();
    for &id in &cfg.campaign.tasks {
        let task = Task::from_id(id)?;
        let (stats, outcomes) = run_campaign(task, cfg.campaign.trials, cfg.seed, source, &cfg.synth, &cfg.sim)?;
        log::info!("task {task}: {}/{} succeeded", stats.successes, stats.trials);
        csv.push_str(&stats.csv_row());
        csv.push('\n');
        for o in &outcomes {
            jsonl.push_str(&serde_json::to_string(o).map_err(CliError::output)?);
            jsonl.push('\n');
        }
        rows.push(stats);
    }
    create_dir(out)?;
    write_text(&out.join(CAMPAIGN_FILE), &csv)?;
    write_text(&out.join(OUTCOMES_FILE), &jsonl)?;
    manifest.finish(out)?;
    Ok(rows)
}

/// Output directory of a command: `--out` or the configured default.
pub fn default_out(cfg: &PipelineConfig, command: &str) -> PathBuf {
    let p = &cfg.paths;
    match command {
        "generate" => p.dataset.clone(),
        "train" => p.run.clone(),
        "predict" => p.predictions.clone(),
        "evaluate" => p.report.clone(),
        "interpret" => p.frames.clone(),
        "simulate" => p.simulation.clone(),
        _ => p.validation.clone(),
    }
}
