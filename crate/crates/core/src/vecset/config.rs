use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One level of the latent hierarchy. Level index 0 is the finest level
/// (most latents); the last level is the coarsest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub latent_count: usize,
    pub latent_channels: usize,
    pub sa_layers: usize,
}

impl LevelConfig {
    pub const fn new(latent_count: usize, latent_channels: usize, sa_layers: usize) -> Self {
        Self { latent_count, latent_channels, sa_layers }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Attention width shared by every block.
    pub width: usize,
    pub heads: usize,
    /// Hidden width of each feed-forward block, as a multiple of `width`.
    pub mlp_ratio: usize,
    /// Width of the fixed sinusoidal embedding; a multiple of 6.
    pub pe_width: usize,
    /// Lowest embedding frequency; later frequencies double.
    pub pe_base_freq: f64,
    /// Finest level first.
    pub levels: Vec<LevelConfig>,
    /// Index of the first point picked by farthest point sampling.
    #[serde(default)]
    pub fps_seed_index: usize,
    /// Occupancy queries evaluated per chunk at inference time.
    #[serde(default = "default_query_chunk")]
    pub query_chunk: usize,
}

fn default_query_chunk() -> usize {
    4096
}

pub const DEFAULT_PE_BASE_FREQ: f64 = std::f64::consts::FRAC_PI_2;

impl ModelConfig {
    /// A model with `heads = max(1, width / 64)` and the default embedding.
    pub fn new(width: usize, levels: Vec<LevelConfig>) -> Self {
        Self {
            width,
            heads: (width / 64).max(1),
            mlp_ratio: 4,
            pe_width: 48,
            pe_base_freq: DEFAULT_PE_BASE_FREQ,
            levels,
            fps_seed_index: 0,
            query_chunk: default_query_chunk(),
        }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// `M_{i-1} / M_i` for each level after the first.
    pub fn downsample_ratios(&self) -> Vec<f64> {
        self.levels.windows(2).map(|w| w[0].latent_count as f64 / w[1].latent_count as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::config("levels", "at least one level is required"));
        }
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::config("heads", format!("width {} must be a positive multiple of heads {}", self.width, self.heads)));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("mlp_ratio", "must be positive"));
        }
        if self.pe_width == 0 || !self.pe_width.is_multiple_of(6) {
            return Err(Error::config("pe_width", format!("{} is not a positive multiple of 6", self.pe_width)));
        }
        if !(self.pe_base_freq.is_finite() && self.pe_base_freq > 0.0) {
            return Err(Error::config("pe_base_freq", "must be positive and finite"));
        }
        if self.query_chunk == 0 {
            return Err(Error::config("query_chunk", "must be positive"));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.latent_count == 0 || l.latent_channels == 0 {
                return Err(Error::config(format!("levels[{i}]"), "latent count and channels must be positive"));
            }
            if l.latent_channels > self.width {
                return Err(Error::config(
                    format!("levels[{i}].latent_channels"),
                    format!("{} exceeds width {}", l.latent_channels, self.width),
                ));
            }
        }
        for (i, w) in self.levels.windows(2).enumerate() {
            if w[1].latent_count >= w[0].latent_count {
                return Err(Error::config(
                    format!("levels[{}].latent_count", i + 1),
                    "latent counts must strictly decrease from the finest to the coarsest level",
                ));
            }
        }
        Ok(())
    }

    /// Fewest input points the encoder accepts.
    pub fn min_input_points(&self) -> usize {
        self.levels[0].latent_count
    }

    /// Three-level latent shapes of the smaller published configuration
    /// (512x8, 128x16, 32x32), at a given width and depth.
    pub fn shapenet_latents(width: usize, sa_layers: usize) -> Self {
        Self::new(
            width,
            vec![LevelConfig::new(512, 8, sa_layers), LevelConfig::new(128, 16, sa_layers), LevelConfig::new(32, 32, sa_layers)],
        )
    }

    /// Three-level latent shapes of the larger published configuration
    /// (2048x16, 512x32, 128x64) with 8 self-attention layers per level.
    pub fn objaverse_latents(width: usize) -> Self {
        Self::new(
            width,
            vec![LevelConfig::new(2048, 16, 8), LevelConfig::new(512, 32, 8), LevelConfig::new(128, 64, 8)],
        )
    }

    /// Single-level model with 2048 latents and 24 self-attention layers.
    pub fn flat_baseline(width: usize) -> Self {
        Self::new(width, vec![LevelConfig::new(2048, 64, 24)])
    }

    /// Double-precision gradient-check model: width 16, latents 16/8/4.
    pub fn tiny() -> Self {
        Self {
            heads: 2,
            mlp_ratio: 2,
            pe_width: 12,
            ..Self::new(16, vec![LevelConfig::new(16, 4, 1), LevelConfig::new(8, 4, 1), LevelConfig::new(4, 4, 1)])
        }
    }
}
