//! Autoencoder training loop.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::Graph;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::geometry::shape::to_f64;
use crate::geometry::{balanced_query_batch, Point3, SampledShape};
use crate::params::ParamStore;
use crate::tensor::{all_finite, Mat};
use crate::vecset::{HierarchicalModel, LatentHierarchy, ModelConfig};

use super::loss::{occupancy_loss_node, LossBreakdown};
use super::optim::{AdamW, OptimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    pub steps: u64,
    /// Shapes whose gradients are accumulated per optimizer step.
    pub shapes_per_step: usize,
    pub queries_per_shape: usize,
    /// Surface points fed to the encoder.
    pub input_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
}

fn default_log_every() -> u64 {
    50
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.shapes_per_step == 0 {
            return Err(Error::config("shapes_per_step", "must be positive"));
        }
        if self.queries_per_shape == 0 || !self.queries_per_shape.is_multiple_of(2) {
            return Err(Error::config("queries_per_shape", "must be even and positive"));
        }
        if self.input_points < self.model.min_input_points() {
            return Err(Error::config(
                "input_points",
                format!("{} is below the finest latent count {}", self.input_points, self.model.min_input_points()),
            ));
        }
        Ok(())
    }
}

/// Encoder input for a shape: `count` surface points, either a random subset
/// (`rng` given) or the leading `count` points.
pub fn encoder_input<R: Rng + ?Sized>(shape: &SampledShape, count: usize, rng: Option<&mut R>) -> Result<Vec<Point3>> {
    let n = shape.surface_points.len();
    if n < count {
        return Err(Error::contract(format!("shape {:?} has {n} surface points, {count} required", shape.name)));
    }
    Ok(match rng {
        Some(rng) if n > count => sample(rng, n, count).into_iter().map(|i| to_f64(shape.surface_points[i])).collect(),
        _ => shape.surface_points[..count].iter().map(|p| to_f64(*p)).collect(),
    })
}

const MOMENT_PREFIX: [&str; 2] = ["optim.m/", "optim.v/"];

/// Parameters of a checkpoint, without any saved optimizer state.
fn parameters_of(ckpt: &Checkpoint) -> ParamStore<f32> {
    let params = Checkpoint {
        meta: serde_json::Value::Null,
        tensors: ckpt.tensors.iter().filter(|(n, _)| !n.starts_with("optim.")).cloned().collect(),
    };
    params.to_store()
}

/// Model, parameters and optimizer state of one training run.
pub struct AutoencoderTrainer {
    pub config: TrainConfig,
    pub model: HierarchicalModel,
    pub store: ParamStore<f32>,
    pub optim: AdamW<f32>,
    rng: ChaCha8Rng,
    /// Remaining shape indices of the current shuffled pass.
    order: Vec<usize>,
}

impl AutoencoderTrainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (model, store) = HierarchicalModel::init(config.model.clone(), config.seed)?;
        let store = store.cast::<f32>();
        let optim = AdamW::new(config.optim.clone(), &store);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        Ok(Self { config, model, store, optim, rng, order: Vec::new() })
    }

    /// Continues a run from a checkpoint written by [`AutoencoderTrainer::checkpoint`].
    /// The continued run is identical to one that never stopped.
    pub fn resume(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(config)?;
        let meta = &ckpt.meta;
        if meta["model"] != serde_json::to_value(&t.config.model)? {
            return Err(Error::config("model", "differs from the checkpoint being resumed"));
        }
        if meta["seed"] != json!(t.config.seed) {
            return Err(Error::config("seed", "differs from the checkpoint being resumed"));
        }
        t.store.load_from(&parameters_of(ckpt)).map_err(Error::Format)?;
        let moments = |prefix: &str| -> Result<Vec<Mat<f32>>> {
            t.store
                .iter()
                .map(|(n, _)| ckpt.get(&format!("{prefix}{n}")).cloned().ok_or_else(|| Error::Format(format!("checkpoint lacks optimizer state for {n}"))))
                .collect()
        };
        let (m, v) = (moments(MOMENT_PREFIX[0])?, moments(MOMENT_PREFIX[1])?);
        let step = meta["step"].as_u64().ok_or_else(|| Error::Format("checkpoint lacks a step".into()))?;
        t.optim.restore(step, m, v)?;
        let word_pos: u128 = meta["rng_word_pos"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("checkpoint lacks the sampler position".into()))?;
        t.rng.set_word_pos(word_pos);
        t.order = serde_json::from_value(meta["order"].clone())?;
        Ok(t)
    }

    pub fn step(&self) -> u64 {
        self.optim.step
    }

    /// One optimizer step on `shapes` with gradients accumulated in order.
    pub fn train_step(&mut self, shapes: &[&SampledShape]) -> Result<LossBreakdown> {
        if shapes.is_empty() {
            return Err(Error::contract("train step needs at least one shape"));
        }
        let mut acc: Vec<Mat<f32>> = self.store.zeros_like();
        let mut parts = Vec::with_capacity(shapes.len());
        let scale = 1.0 / shapes.len() as f64;
        for shape in shapes {
            let input = encoder_input(shape, self.config.input_points, Some(&mut self.rng))?;
            let batch = balanced_query_batch(shape, self.config.queries_per_shape, &mut self.rng)?;
            if batch.is_empty() {
                log::warn!("{}: no balanced queries available, skipped", shape.name);
                continue;
            }
            let queries: Vec<Point3> = batch.points.iter().map(|p| to_f64(*p)).collect();
            let anchors = self.model.select_anchors(&input)?;
            let mut g = Graph::new(&self.store);
            let enc = self.model.encode_hierarchy(&mut g, &input, &anchors)?;
            let feats = self.model.decode_features(&mut g, &enc.latents)?;
            let logits = self.model.query_occupancy(&mut g, &queries, &feats)?;
            let (loss, breakdown) = occupancy_loss_node(&mut g, logits, &batch.labels, &batch.pools, scale)?;
            if !breakdown.total.is_finite() {
                return Err(self.divergence());
            }
            let grads = g.backward(loss);
            for (a, gr) in acc.iter_mut().zip(g.param_grads(&grads)) {
                *a += &gr;
            }
            parts.push(breakdown);
        }
        if !acc.iter().all(all_finite) {
            return Err(self.divergence());
        }
        self.optim.apply(&mut self.store, &mut acc);
        Ok(LossBreakdown::mean(&parts))
    }

    fn divergence(&self) -> Error {
        Error::NonFiniteLoss { step: self.optim.step, snapshot: Box::new(self.checkpoint()) }
    }

    /// Runs the configured number of steps, cycling through `shapes` in a
    /// seeded shuffled order. `on_step` sees every step's loss.
    pub fn fit(&mut self, shapes: &[SampledShape], on_step: impl FnMut(u64, &LossBreakdown)) -> Result<Vec<LossBreakdown>> {
        self.fit_with_checkpoints(shapes, on_step, |_| Ok(()))
    }

    /// Like [`AutoencoderTrainer::fit`], handing a checkpoint to `save` every
    /// `checkpoint_every` steps.
    pub fn fit_with_checkpoints(
        &mut self,
        shapes: &[SampledShape],
        mut on_step: impl FnMut(u64, &LossBreakdown),
        mut save: impl FnMut(&Checkpoint) -> Result<()>,
    ) -> Result<Vec<LossBreakdown>> {
        if shapes.is_empty() {
            return Err(Error::contract("no training shapes"));
        }
        if self.order.iter().any(|&i| i >= shapes.len()) {
            return Err(Error::contract("resumed shuffle order does not fit the shape list"));
        }
        let mut trace = Vec::with_capacity(self.config.steps as usize);
        while self.step() < self.config.steps {
            let mut batch = Vec::with_capacity(self.config.shapes_per_step);
            while batch.len() < self.config.shapes_per_step.min(shapes.len()) {
                if self.order.is_empty() {
                    self.order = sample(&mut self.rng, shapes.len(), shapes.len()).into_vec();
                }
                batch.push(&shapes[self.order.pop().expect("refilled")]);
            }
            let loss = self.train_step(&batch)?;
            on_step(self.step(), &loss);
            if self.config.log_every > 0 && self.step().is_multiple_of(self.config.log_every) {
                log::info!("step {} loss {:.5} (vol {:.5}, near {:.5})", self.step(), loss.total, loss.vol_bce, loss.near_bce);
            }
            trace.push(loss);
            let every = self.config.checkpoint_every;
            if every > 0 && self.step().is_multiple_of(every) {
                save(&self.checkpoint())?;
            }
        }
        Ok(trace)
    }

    /// Parameters plus everything needed to resume: optimizer moments,
    /// sampler position and the current shuffle order.
    pub fn checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "kind": "autoencoder",
            "model": self.config.model,
            "step": self.optim.step,
            "seed": self.config.seed,
            "input_points": self.config.input_points,
            "rng_word_pos": self.rng.get_word_pos().to_string(),
            "order": self.order,
        });
        let mut ckpt = Checkpoint::from_store(meta, &self.store);
        let (m, v) = self.optim.moments();
        for (prefix, moments) in MOMENT_PREFIX.iter().zip([m, v]) {
            for ((name, _), x) in self.store.iter().zip(moments) {
                ckpt.push(format!("{prefix}{name}"), x);
            }
        }
        ckpt
    }
}

/// A trained model bound to its parameters, for inference.
pub struct TrainedAutoencoder {
    pub model: HierarchicalModel,
    pub store: ParamStore<f32>,
}

impl TrainedAutoencoder {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ckpt.meta["model"].clone())
            .map_err(|e| Error::Format(format!("checkpoint model config: {e}")))?;
        if ckpt.meta.get("kind").and_then(|k| k.as_str()) != Some("autoencoder") {
            return Err(Error::Format("checkpoint is not an autoencoder".into()));
        }
        let store = parameters_of(ckpt);
        let model = HierarchicalModel::bind(config, &store)?;
        Ok(Self { model, store })
    }

    pub fn encode(&self, points: &[Point3]) -> Result<LatentHierarchy<f32>> {
        self.model.encode(&self.store, points)
    }

    pub fn logits(&self, latents: &LatentHierarchy<f32>, queries: &[Point3]) -> Result<Vec<f32>> {
        let f = self.model.decode(&self.store, latents)?;
        self.model.query(&self.store, &f, queries)
    }

    /// Fraction of queries whose logit sign matches the label.
    pub fn accuracy(&self, latents: &LatentHierarchy<f32>, queries: &[Point3], labels: &[bool]) -> Result<f64> {
        let logits = self.logits(latents, queries)?;
        let hits = logits.iter().zip(labels).filter(|(&l, &y)| (l > 0.0) == y).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}
