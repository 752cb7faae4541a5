use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridcodec::{GridSet, DEFAULT_MIN_PIECE_LEN};
use crate::loss::LossConfig;
use crate::postprocess::Binarization;
use crate::synthdata::AugmentConfig;

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum1: f64,
    pub momentum2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps (in addition to `max_epochs`).
    pub max_steps: Option<u64>,
    /// Wall-clock budget in seconds, checked after every step.
    pub time_budget_secs: Option<f64>,
    /// Non-improving validation evaluations tolerated before stopping.
    pub early_stop_patience: usize,
    /// Steps between validation evaluations.
    pub eval_interval: u64,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    /// Parity classes that contribute to the loss.
    pub grids: GridSet,
    /// Minimum clipped piece length for a positive cell, pixels.
    pub min_piece_len: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum1: 0.9,
            momentum2: 0.999,
            batch_size: 8,
            max_epochs: 10,
            max_steps: None,
            time_budget_secs: None,
            early_stop_patience: 5,
            eval_interval: 100,
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
            grids: GridSet::ALL,
            min_piece_len: DEFAULT_MIN_PIECE_LEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for the reduced model on a CPU.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 4,
            eval_interval: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("momentum1", self.momentum1), ("momentum2", self.momentum2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1".into());
        }
        if self.time_budget_secs.is_some_and(|t| !(t > 0.0)) {
            return bad("time_budget_secs must be positive".into());
        }
        if !(self.min_piece_len >= 0.0) {
            return bad("min_piece_len must be non-negative".into());
        }
        self.augment.validate()?;
        self.loss.validate()
    }
}

/// Evaluation protocol: decode, rasterize, smooth, binarize, compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Raster width `W_l` for predictions and ground truth, pixels.
    pub line_width: usize,
    pub binarization: Binarization,
    /// Smoothing σ; 0 skips smoothing.
    pub sigma_s: f64,
    pub kernel_size: usize,
    /// Cells with probability strictly above this are decoded.
    pub decode_threshold: f64,
    /// Optional tolerance radius applied to the ground truth.
    pub gt_dilation: usize,
    /// Parity classes whose predictions are decoded.
    pub grids: GridSet,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            line_width: 2,
            binarization: Binarization::Otsu,
            sigma_s: 1.0,
            kernel_size: 5,
            decode_threshold: 0.5,
            gt_dilation: 0,
            grids: GridSet::ALL,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.line_width == 0 {
            return Err(Error::Config("line_width must be at least 1".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if !(self.sigma_s >= 0.0) {
            return Err(Error::Config("sigma_s must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.decode_threshold) {
            return Err(Error::Config("decode_threshold must lie in [0, 1]".into()));
        }
        if let Binarization::Fixed(t) = self.binarization {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("fixed threshold must lie in [0, 1], got {t}")));
            }
        }
        Ok(())
    }
}
