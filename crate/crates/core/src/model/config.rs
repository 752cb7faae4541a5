use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How each stage reduces resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DownsamplingMode {
    /// Last conv of a stage has stride 2.
    #[default]
    StridedConv,
    /// Last conv of a stage has stride 1 and is followed by 2×2 max pooling.
    MaxPool,
}

impl std::str::FromStr for DownsamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strided_conv" | "strided" | "s" => Ok(Self::StridedConv),
            "max_pool" | "pool" | "p" => Ok(Self::MaxPool),
            other => Err(Error::Config(format!(
                "unknown downsampling mode {other:?} (expected strided_conv or max_pool)"
            ))),
        }
    }
}

/// Nonlinearity after every normalized convolution. Only the rectifier is
/// supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Network topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_size: usize,
    pub input_channels: usize,
    /// Output width of each downsampling stage.
    pub channel_plan: Vec<usize>,
    /// Convolutions per stage; the last one downsamples.
    pub blocks_per_stage: usize,
    /// Group count of every normalization layer; `None` uses `min(32, C)`.
    pub norm_groups: Option<usize>,
    pub head_width: usize,
    pub downsampling_mode: DownsamplingMode,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 512,
            input_channels: 3,
            channel_plan: vec![64, 128, 256, 512],
            blocks_per_stage: 3,
            norm_groups: None,
            head_width: 512,
            downsampling_mode: DownsamplingMode::StridedConv,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    /// Reduced preset for CPU-scale runs: input 256, plan `[16, 32, 64, 128]`.
    pub fn desk() -> Self {
        Self {
            input_size: 256,
            channel_plan: vec![16, 32, 64, 128],
            head_width: 128,
            ..Self::default()
        }
    }

    pub fn stages(&self) -> usize {
        self.channel_plan.len()
    }

    /// Total downsampling factor of the extractor.
    pub fn stride(&self) -> usize {
        1 << self.stages()
    }

    /// Side `F` of the extractor's output map.
    pub fn feature_side(&self) -> usize {
        self.input_size / self.stride()
    }

    /// Side `F − 1` of the output lattice.
    pub fn lattice_side(&self) -> usize {
        self.feature_side().saturating_sub(1)
    }

    /// Main-grid cell size in input pixels.
    pub fn cell_size(&self) -> usize {
        2 * self.stride()
    }

    /// Group count used for a layer with `channels` outputs.
    pub fn groups_for(&self, channels: usize) -> usize {
        self.norm_groups.unwrap_or(channels.min(32))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        if self.channel_plan.is_empty() || self.channel_plan.contains(&0) {
            return bad(format!(
                "channel_plan must list positive stage widths, got {:?}",
                self.channel_plan
            ));
        }
        if self.stages() > 16 {
            return bad(format!("channel_plan has {} stages; at most 16 are supported", self.stages()));
        }
        if self.blocks_per_stage == 0 {
            return bad("blocks_per_stage must be at least 1".into());
        }
        if self.head_width == 0 {
            return bad("head_width must be positive".into());
        }
        if self.input_size % self.cell_size() != 0 || self.input_size < self.cell_size() {
            return bad(format!(
                "input_size {} must be a positive multiple of the cell size {} (2^(stages+1))",
                self.input_size,
                self.cell_size()
            ));
        }
        if self.norm_groups == Some(0) {
            return bad("norm_groups must be positive".into());
        }
        for &c in self.channel_plan.iter().chain(std::iter::once(&self.head_width)) {
            let g = self.groups_for(c);
            if c % g != 0 {
                return bad(format!("norm_groups {g} does not divide the {c}-channel layer"));
            }
        }
        Ok(())
    }
}
