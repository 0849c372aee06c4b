//! Denoiser training with teacher forcing: every stage sees ground-truth
//! coarser latents.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::Graph;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{all_finite, Mat};
use crate::training::{AdamW, OptimConfig};
use crate::vecset::{LatentHierarchy, LevelConfig};

use super::denoiser::{denoising_loss, Denoiser, DenoiserConfig};
use super::schedule::{add_noise, SigmaSampler};

/// One training example: a latent hierarchy and its condition vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRecord {
    pub latents: LatentHierarchy<f32>,
    pub cond: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionTrainConfig {
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub sigma: SigmaSampler,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub width: usize,
    pub blocks: usize,
    #[serde(default)]
    pub cond_dim: usize,
}

impl DiffusionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        if !(self.sigma.log_std >= 0.0) {
            return Err(Error::config("sigma.log_std", "must be non-negative"));
        }
        Ok(())
    }

    pub fn stage_config(&self, levels: &[LevelConfig], level: usize) -> Result<DenoiserConfig> {
        let mut c = DenoiserConfig::for_level(levels, level, self.width, self.blocks)?;
        c.cond_dim = self.cond_dim;
        Ok(c)
    }
}

pub struct StageTrainer {
    pub denoiser: Denoiser,
    pub store: ParamStore<f32>,
    pub optim: AdamW<f32>,
    config: DiffusionTrainConfig,
    rng: ChaCha8Rng,
}

impl StageTrainer {
    pub fn new(denoiser_config: DenoiserConfig, config: DiffusionTrainConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed ^ (denoiser_config.level as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407);
        let (denoiser, store) = Denoiser::init(denoiser_config, seed)?;
        let store = store.cast::<f32>();
        let optim = AdamW::new(config.optim.clone(), &store);
        Ok(Self { denoiser, store, optim, config, rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)) })
    }

    fn level(&self) -> usize {
        self.denoiser.config.level
    }

    /// One optimizer step; returns the mean weighted loss over `batch`.
    pub fn train_step(&mut self, batch: &[&LatentRecord]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("diffusion step needs at least one record"));
        }
        let level = self.level();
        let mut acc = self.store.zeros_like();
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for rec in batch {
            let levels = &rec.latents.levels;
            if levels.len() <= level {
                return Err(Error::contract(format!("record has {} levels, stage needs level {}", levels.len(), level + 1)));
            }
            let clean = &levels[level];
            let sigma = self.config.sigma.sample(&mut self.rng);
            let noisy = add_noise(clean, sigma, &mut self.rng);
            let coarser: Vec<Mat<f32>> = self.denoiser.coarser_of(levels).into_iter().cloned().collect();
            let mut g = Graph::new(&self.store);
            let out = self.denoiser.forward(&mut g, &noisy, sigma, &rec.cond, &coarser)?;
            let loss = denoising_loss(&mut g, out, clean, sigma, self.denoiser.config.sigma_data);
            let loss = g.scale(loss, scale as f32);
            let value = g.scalar(loss) as f64;
            if !value.is_finite() {
                return Err(self.divergence());
            }
            total += value;
            let grads = g.backward(loss);
            for (a, gr) in acc.iter_mut().zip(g.param_grads(&grads)) {
                *a += &gr;
            }
        }
        if !acc.iter().all(all_finite) {
            return Err(self.divergence());
        }
        self.optim.apply(&mut self.store, &mut acc);
        Ok(total)
    }

    fn divergence(&self) -> Error {
        Error::NonFiniteLoss { step: self.optim.step, snapshot: Box::new(self.checkpoint()) }
    }

    /// Runs the configured number of steps over seeded shuffled batches.
    pub fn fit(&mut self, records: &[LatentRecord], mut on_step: impl FnMut(u64, f64)) -> Result<Vec<f64>> {
        if records.is_empty() {
            return Err(Error::contract("no latent records"));
        }
        let mut order: Vec<usize> = Vec::new();
        let mut trace = Vec::with_capacity(self.config.steps as usize);
        while self.optim.step < self.config.steps {
            let mut batch = Vec::with_capacity(self.config.batch);
            while batch.len() < self.config.batch {
                if order.is_empty() {
                    order = sample(&mut self.rng, records.len(), records.len()).into_vec();
                }
                batch.push(&records[order.pop().expect("refilled")]);
            }
            let loss = self.train_step(&batch)?;
            on_step(self.optim.step, loss);
            trace.push(loss);
        }
        Ok(trace)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = json!({ "kind": "denoiser", "denoiser": self.denoiser.config, "step": self.optim.step });
        Checkpoint::from_store(meta, &self.store)
    }

    pub fn into_trained(self) -> TrainedStage {
        TrainedStage { denoiser: self.denoiser, store: self.store }
    }
}

/// Frozen denoiser of one level.
#[derive(Clone, Debug)]
pub struct TrainedStage {
    pub denoiser: Denoiser,
    pub store: ParamStore<f32>,
}

impl TrainedStage {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.get("kind").and_then(|k| k.as_str()) != Some("denoiser") {
            return Err(Error::Format("checkpoint is not a denoiser".into()));
        }
        let config: DenoiserConfig = serde_json::from_value(ckpt.meta["denoiser"].clone())
            .map_err(|e| Error::Format(format!("checkpoint denoiser config: {e}")))?;
        let store = ckpt.to_store::<f32>();
        let denoiser = Denoiser::bind(config, &store)?;
        Ok(Self { denoiser, store })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(json!({ "kind": "denoiser", "denoiser": self.denoiser.config }), &self.store)
    }

    pub fn level(&self) -> usize {
        self.denoiser.config.level
    }
}

/// Trains one stage per level, finest first in the returned list.
pub fn train_cascade(
    records: &[LatentRecord],
    levels: &[LevelConfig],
    config: &DiffusionTrainConfig,
    mut on_step: impl FnMut(usize, u64, f64),
) -> Result<Vec<TrainedStage>> {
    let mut out = Vec::with_capacity(levels.len());
    for level in 0..levels.len() {
        let mut t = StageTrainer::new(config.stage_config(levels, level)?, config.clone())?;
        t.fit(records, |s, l| on_step(level, s, l))?;
        out.push(t.into_trained());
    }
    Ok(out)
}
