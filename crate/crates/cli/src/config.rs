//! JSON run configs and their built-in defaults.

use std::path::Path;

use serde::de::DeserializeOwned;

use hiervec_core::diffusion::{DiffusionTrainConfig, SigmaSampler};
use hiervec_core::training::{OptimConfig, TrainConfig};
use hiervec_core::vecset::{LevelConfig, ModelConfig};
use hiervec_core::{Error, Result};

/// Reads a JSON config; malformed fields are config errors naming the file
/// and the field path.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::config(format!("{}: {}", path.display(), e.path()), e.into_inner().to_string()))
}

pub fn load_or<T: DeserializeOwned>(path: Option<&Path>, default: impl FnOnce() -> T) -> Result<T> {
    path.map_or_else(|| Ok(default()), load)
}

/// Desk-scale autoencoder run: three levels of 128, 32 and 8 latents.
pub fn default_train() -> TrainConfig {
    let steps = 2500;
    TrainConfig {
        model: ModelConfig {
            pe_width: 24,
            ..ModelConfig::new(32, vec![LevelConfig::new(128, 8, 1), LevelConfig::new(32, 16, 1), LevelConfig::new(8, 32, 1)])
        },
        optim: OptimConfig { lr: 1e-3, warmup_steps: 50, decay_steps: steps, ..Default::default() },
        steps,
        shapes_per_step: 8,
        queries_per_shape: 512,
        input_points: 512,
        seed: 0,
        checkpoint_every: 250,
        log_every: 50,
    }
}

pub fn default_diffusion() -> DiffusionTrainConfig {
    let steps = 2000;
    DiffusionTrainConfig {
        optim: OptimConfig { lr: 1e-3, warmup_steps: 50, decay_steps: steps, weight_decay: 0.0, ..Default::default() },
        sigma: SigmaSampler::default(),
        steps,
        batch: 8,
        seed: 0,
        width: 32,
        blocks: 2,
        cond_dim: 0,
    }
}
