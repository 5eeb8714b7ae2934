use std::process::ExitCode;

use affkp_core::io::IoError;
use affkp_core::metrics::MetricsError;
use affkp_core::model::ModelError;
use affkp_core::tasks::TaskError;
use affkp_core::train::TrainError;
use affkp_core::vote::ClusterError;
use thiserror::Error;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub fn to_exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }

    /// Reading inputs failed.
    pub fn input(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }

    /// Writing outputs failed.
    pub fn output(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(m) => CliError::Config(format!("model: {m}")),
            ModelError::EmptyInput => CliError::Data(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::EmptyDataset => CliError::Data(e.to_string()),
            TrainError::Loss(l) => CliError::Data(l.to_string()),
            TrainError::Model(m) => m.into(),
            d @ TrainError::Diverged { .. } => CliError::Model(d.to_string()),
        }
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::InvalidConfig(m) => CliError::Config(format!("cluster: {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::InvalidConfig(m) => CliError::Config(format!("eval: {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::InvalidConfig(_) | TaskError::UnknownTask(_) => CliError::Config(e.to_string()),
            TaskError::Model(m) => m.into(),
            TaskError::Cluster(c) => c.into(),
            TaskError::Synth(s) => CliError::Data(s.to_string()),
            TaskError::NoScene { .. } => CliError::Data(e.to_string()),
        }
    }
}
