//! Run configuration files.
//!
//! TOML with sections `[model]` (plus `[model.controller]`, `[model.mhc]`,
//! `[model.toggles]`), `[loss]`, `[task]`, `[optimizer]` and `[train]`. Missing
//! keys take their defaults; unknown keys are rejected.

use std::fs;
use std::path::Path;

use lpcsm_core::optim::SgdConfig;
use lpcsm_core::{LossWeights, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::tasks::TaskConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    /// Steps averaged for the reported final loss.
    pub final_window: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch_size: 8,
            final_window: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub task: TaskConfig,
    pub optimizer: SgdConfig,
    pub train: TrainSettings,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |e: lpcsm_core::Error| HarnessError::config(e.to_string());
        self.model.validate().map_err(bad)?;
        self.loss.validate().map_err(bad)?;
        self.optimizer.validate().map_err(bad)?;
        if self.train.batch_size == 0 {
            return Err(HarnessError::config("train.batch_size must be positive"));
        }
        self.task.check(&self.model)
    }
}

/// Canonical text form of a model configuration.
pub fn model_to_toml(cfg: &ModelConfig) -> String {
    toml::to_string(cfg).expect("model config serializes")
}

pub fn model_from_toml(text: &str) -> Result<ModelConfig> {
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| HarnessError::config(e.to_string()))?;
    cfg.validate().map_err(|e| HarnessError::config(e.to_string()))?;
    Ok(cfg)
}
