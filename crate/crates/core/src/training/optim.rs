//! Adam with decoupled weight decay and a warmup + cosine schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Mat, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Length of the cosine decay; the rate stays at its floor afterwards.
    pub decay_steps: u64,
    /// Final rate as a fraction of `lr`.
    pub min_lr_ratio: f64,
    /// Global gradient norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 100,
            decay_steps: 10_000,
            min_lr_ratio: 0.1,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("lr", self.lr >= 0.0 && self.lr.is_finite()),
            ("beta1", (0.0..1.0).contains(&self.beta1)),
            ("beta2", (0.0..1.0).contains(&self.beta2)),
            ("eps", self.eps > 0.0),
            ("weight_decay", self.weight_decay >= 0.0),
            ("min_lr_ratio", (0.0..=1.0).contains(&self.min_lr_ratio)),
            ("clip_norm", self.clip_norm >= 0.0),
        ];
        for (field, ok) in checks {
            if !ok {
                return Err(Error::config(field, "out of range"));
            }
        }
        Ok(())
    }

    /// Learning rate for 0-based `step`: linear warmup, then cosine decay
    /// from `lr` to `lr * min_lr_ratio`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let t = step - self.warmup_steps;
        if self.decay_steps == 0 || t >= self.decay_steps {
            return self.lr * if self.decay_steps == 0 { 1.0 } else { self.min_lr_ratio };
        }
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / self.decay_steps as f64).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cos)
    }
}

/// Moment estimates for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: OptimConfig,
    pub step: u64,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: OptimConfig, store: &ParamStore<T>) -> Self {
        Self { config, step: 0, m: store.zeros_like(), v: store.zeros_like() }
    }

    /// First and second moment estimates, in store order.
    pub fn moments(&self) -> (&[Mat<T>], &[Mat<T>]) {
        (&self.m, &self.v)
    }

    /// Restores the state saved by [`AdamW::moments`] after `step` updates.
    pub fn restore(&mut self, step: u64, m: Vec<Mat<T>>, v: Vec<Mat<T>>) -> Result<()> {
        let fits = |x: &[Mat<T>]| x.len() == self.m.len() && x.iter().zip(&self.m).all(|(a, b)| a.dim() == b.dim());
        if !fits(&m) || !fits(&v) {
            return Err(Error::Format("optimizer moments do not match the parameters".into()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Applies one update and returns the learning rate used.
    pub fn apply(&mut self, store: &mut ParamStore<T>, grads: &mut [Mat<T>]) -> f64 {
        let c = &self.config;
        if c.clip_norm > 0.0 {
            let norm = grads.iter().flat_map(|g| g.iter()).map(|&x| x.to_f64().powi(2)).sum::<f64>().sqrt();
            if norm > c.clip_norm {
                let s = T::of(c.clip_norm / norm);
                grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * s));
            }
        }
        let lr = c.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        let decay = T::of(lr * c.weight_decay);
        for (((p, g), m), v) in store.values_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let update = step_size * *m / ((*v * inv_bc2).sqrt() + eps);
                *p = *p - decay * *p - update;
            });
        }
        lr
    }
}
