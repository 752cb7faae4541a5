//! The versioned run configuration file shared by every command.
//!
//! ```
//! use lsnet::config::RunConfigFile;
//!
//! let cfg = RunConfigFile::from_json(r#"{"version": 1, "model": {"input_size": 256}}"#).unwrap();
//! assert_eq!(cfg.model.input_size, 256);
//! assert!(RunConfigFile::from_json(r#"{"version": 1, "modle": {}}"#).is_err());
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridcodec::GridSet;
use crate::loss::LossConfig;
use crate::model::ModelConfig;
use crate::synthdata::{AugmentConfig, SceneParams};
use crate::training::{EvalConfig, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Optimization settings of the run file; augmentation and loss live in
/// their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum1: f64,
    pub momentum2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub max_steps: Option<u64>,
    pub time_budget_secs: Option<f64>,
    pub early_stop_patience: usize,
    pub eval_interval: u64,
    pub grids: GridSet,
    pub min_piece_len: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::from(&TrainConfig::default())
    }
}

impl From<&TrainConfig> for TrainSection {
    fn from(t: &TrainConfig) -> Self {
        Self {
            learning_rate: t.learning_rate,
            momentum1: t.momentum1,
            momentum2: t.momentum2,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            max_steps: t.max_steps,
            time_budget_secs: t.time_budget_secs,
            early_stop_patience: t.early_stop_patience,
            eval_interval: t.eval_interval,
            grids: t.grids,
            min_piece_len: t.min_piece_len,
            seed: t.seed,
        }
    }
}

/// Every setting of a run: `{version, scene, augment, model, loss, train,
/// eval}`. Missing sections and fields take their defaults; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub version: u32,
    #[serde(default)]
    pub scene: SceneParams,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            scene: SceneParams::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfigFile {
    /// Reduced model and training settings that run on a CPU.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainSection::from(&TrainConfig::desk()),
            ..Self::default()
        }
    }

    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run configuration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.scene.validate()?;
        self.model.validate()?;
        self.train_config().validate()?;
        self.eval.validate()
    }

    /// The training configuration with the augment and loss sections merged in.
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            momentum1: t.momentum1,
            momentum2: t.momentum2,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            max_steps: t.max_steps,
            time_budget_secs: t.time_budget_secs,
            early_stop_patience: t.early_stop_patience,
            eval_interval: t.eval_interval,
            augment: self.augment.clone(),
            loss: self.loss,
            grids: t.grids,
            min_piece_len: t.min_piece_len,
            seed: t.seed,
        }
    }

    /// Splits a training configuration back into the file's sections.
    pub fn set_train_config(&mut self, t: &TrainConfig) {
        self.train = TrainSection::from(t);
        self.augment = t.augment.clone();
        self.loss = t.loss;
    }
}
