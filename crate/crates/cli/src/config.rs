use std::path::Path;

use relunet::model::{ModelConfig, TrainConfig};
use relunet::scenesim::SceneTemplate;
use relunet::signal::StftConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] relunet::Error),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything that fails at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(
                relunet::Error::InvalidConfig(_) | relunet::Error::ConfigMismatch(_),
            ) => 2,
            CliError::Input(_) | CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Top-level JSON configuration. Every section is optional; unknown keys
/// are rejected. A `stft` section, when present, replaces `model.stft` so
/// the model, beamformer and spectrogram export share one analysis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stft: Option<StftConfig>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub simulate: SceneTemplate,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        if let Some(stft) = &config.stft {
            config.model.stft = stft.clone();
        }
        let invalid = |e: relunet::Error| CliError::Config(e.to_string());
        config.model.validate().map_err(invalid)?;
        config.train.validate().map_err(invalid)?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Self::parse("{}"),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                Self::parse(&text)
            }
        }
    }

    pub fn stft(&self) -> &StftConfig {
        &self.model.stft
    }
}
