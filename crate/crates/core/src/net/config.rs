use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which encoder scales receive a co-attention module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionScales {
    /// Only the smaller-resolution map.
    Coarse,
    /// Both the larger and the smaller map.
    CoarseFine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Square input side in pixels.
    pub image_size: usize,
    pub descriptor_dim: usize,
    /// Channel counts of the four stride-2 encoder blocks.
    pub encoder_widths: Vec<usize>,
    /// Attention projection widths, `[larger scale, smaller scale]`.
    pub projection_dims: Vec<usize>,
    pub attention_scales: AttentionScales,
    /// Replace attended features with zeros (architecture unchanged).
    pub ablate_attention: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            descriptor_dim: 64,
            encoder_widths: vec![16, 32, 64, 128],
            projection_dims: vec![32, 32],
            attention_scales: AttentionScales::CoarseFine,
            ablate_attention: false,
        }
    }
}

impl NetworkConfig {
    /// Number of stride-2 encoder blocks.
    pub const BLOCKS: usize = 4;
    /// Total encoder downsampling factor.
    pub const DOWNSAMPLE: usize = 1 << Self::BLOCKS;

    /// Desk-scale configuration: 64×64 inputs, 16-D descriptors.
    pub fn desk() -> Self {
        Self {
            descriptor_dim: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(Self::DOWNSAMPLE) {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of {}",
                self.image_size,
                Self::DOWNSAMPLE
            )));
        }
        if self.descriptor_dim < 2 {
            return Err(Error::Config("descriptor_dim must be >= 2".into()));
        }
        if self.encoder_widths.len() != Self::BLOCKS || self.encoder_widths.contains(&0) {
            return Err(Error::Config(format!(
                "encoder_widths needs {} positive entries",
                Self::BLOCKS
            )));
        }
        if self.projection_dims.len() != 2 || self.projection_dims.contains(&0) {
            return Err(Error::Config("projection_dims needs 2 positive entries".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn attends_fine(&self) -> bool {
        self.attention_scales == AttentionScales::CoarseFine
    }

    /// Spatial side of the larger encoder map.
    pub fn fine_side(&self) -> usize {
        self.image_size / (Self::DOWNSAMPLE / 2)
    }

    pub fn coarse_side(&self) -> usize {
        self.image_size / Self::DOWNSAMPLE
    }
}
