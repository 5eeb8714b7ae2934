//! Pipeline configuration: one JSON document with a section per module.
//! Unknown keys are rejected and every section is validated before any
//! command does work. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use affkp_core::losses::LossConfig;
use affkp_core::metrics::EvalConfig;
use affkp_core::model::ModelConfig;
use affkp_core::synth::SynthConfig;
use affkp_core::tasks::{SimConfig, Task};
use affkp_core::vote::ClusterConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub training: TrainingConfig,
    pub cluster: ClusterConfig,
    pub eval: EvalConfig,
    pub sim: SimConfig,
    pub campaign: CampaignConfig,
    pub paths: PathsConfig,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Scenes written by `generate`; scene `i` uses seed `seed + i`.
    pub scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { scenes: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// A checkpoint is written every this many epochs; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { checkpoint_every: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointSourceKind {
    /// Ground-truth quadruplets.
    Oracle,
    /// Quadruplets extracted from the checkpoint's predictions.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub source: KeypointSourceKind,
    pub trials: usize,
    /// Task ids 1 to 4.
    pub tasks: Vec<u8>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig { source: KeypointSourceKind::Model, trials: 30, tasks: vec![1, 2, 3, 4] }
    }
}

/// Inputs and default outputs of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// `generate` output and `validate` input.
    pub dataset: PathBuf,
    /// `train` input.
    pub train_data: PathBuf,
    /// Scenes read by `predict` and `evaluate`.
    pub eval_data: PathBuf,
    /// `train` output directory.
    pub run: PathBuf,
    /// Model read by `predict` and `simulate`.
    pub checkpoint: PathBuf,
    /// `predict` output, read by `evaluate` and `interpret`.
    pub predictions: PathBuf,
    pub report: PathBuf,
    pub frames: PathBuf,
    pub simulation: PathBuf,
    /// Where `validate` writes its report.
    pub validation: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: "data/train".into(),
            train_data: "data/train".into(),
            eval_data: "data/test".into(),
            run: "runs/train".into(),
            checkpoint: "runs/train/model.ckpt".into(),
            predictions: "runs/predict".into(),
            report: "runs/evaluate".into(),
            frames: "runs/interpret".into(),
            simulation: "runs/simulate".into(),
            validation: "runs/validate".into(),
        }
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.dataset,
            &mut self.train_data,
            &mut self.eval_data,
            &mut self.run,
            &mut self.checkpoint,
            &mut self.predictions,
            &mut self.report,
            &mut self.frames,
            &mut self.simulation,
            &mut self.validation,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |section: &str, e: &dyn std::fmt::Display| CliError::Config(format!("{section}: {e}"));
        self.synth.validate().map_err(|e| cfg("synth", &e))?;
        self.model.validate().map_err(|e| cfg("model", &e))?;
        self.loss.validate().map_err(|e| cfg("loss", &e))?;
        self.cluster.validate().map_err(|e| cfg("cluster", &e))?;
        self.eval.validate().map_err(|e| cfg("eval", &e))?;
        self.sim.validate().map_err(|e| cfg("sim", &e))?;
        if self.data.scenes == 0 {
            return Err(CliError::Config("data.scenes must be at least 1".into()));
        }
        if self.campaign.trials == 0 {
            return Err(CliError::Config("campaign.trials must be at least 1".into()));
        }
        if self.campaign.tasks.is_empty() {
            return Err(CliError::Config("campaign.tasks must name at least one task".into()));
        }
        for &t in &self.campaign.tasks {
            Task::from_id(t).map_err(|e| cfg("campaign", &e))?;
        }
        Ok(())
    }

    /// Parses, applies the seed override, resolves paths and validates.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }
}
