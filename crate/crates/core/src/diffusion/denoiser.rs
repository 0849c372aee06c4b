//! Per-level latent denoiser.
//!
//! Tokens are the rows of one latent set plus a learned per-slot embedding
//! (encoder rows follow the farthest-point anchor order, so slots are
//! consistent across shapes). Coarser latents enter through a chain of cross
//! attentions, coarsest first. The noise level and the optional condition
//! vector drive adaptive shift, scale and gate rows in every block; all of
//! those modulations and the output projection start at zero, so a fresh
//! network returns zero and the denoiser starts as the pure skip path.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AttnKind, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamInit, ParamStore};
use crate::tensor::{Mat, Scalar};
use crate::vecset::blocks::BLOCK_LN_EPS;
use crate::vecset::{AttnBlock, LevelConfig};

use super::schedule::{loss_weight, Preconditioning};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Hierarchy index of the generated level, 0 being the finest.
    pub level: usize,
    pub latent_count: usize,
    pub latent_channels: usize,
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    /// Number of sinusoidal noise-level features.
    pub fourier_width: usize,
    /// Length of the external condition vector; 0 for unconditional models.
    pub cond_dim: usize,
    /// `(count, channels)` of each conditioning level, coarsest first.
    pub coarser: Vec<(usize, usize)>,
    pub sigma_data: f64,
}

impl DenoiserConfig {
    /// Stage generating `levels[level]` and conditioned on every coarser entry.
    pub fn for_level(levels: &[LevelConfig], level: usize, width: usize, blocks: usize) -> Result<Self> {
        let lc = levels.get(level).ok_or_else(|| Error::config("level", format!("{level} outside {} levels", levels.len())))?;
        let config = Self {
            level,
            latent_count: lc.latent_count,
            latent_channels: lc.latent_channels,
            width,
            heads: (width / 32).max(1),
            blocks,
            mlp_ratio: 2,
            fourier_width: 16,
            cond_dim: 0,
            coarser: levels[level + 1..].iter().rev().map(|l| (l.latent_count, l.latent_channels)).collect(),
            sigma_data: 1.0,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_count == 0 || self.latent_channels == 0 {
            return Err(Error::config("latent_count", "latent sets must be non-empty"));
        }
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::config("heads", format!("width {} must be a positive multiple of heads {}", self.width, self.heads)));
        }
        if self.fourier_width == 0 || !self.fourier_width.is_multiple_of(2) {
            return Err(Error::config("fourier_width", "must be even and positive"));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("mlp_ratio", "must be positive"));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::config("sigma_data", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    fn new(init: &mut ParamInit, name: &str, i: usize, o: usize) -> Self {
        Self { w: init.weight(&format!("{name}.w"), i, o), b: Some(init.zeros(&format!("{name}.b"), 1, o)) }
    }

    fn zero(init: &mut ParamInit, name: &str, i: usize, o: usize) -> Self {
        Self { w: init.zeros(&format!("{name}.w"), i, o), b: Some(init.zeros(&format!("{name}.b"), 1, o)) }
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

/// Shift, scale and gate rows for the attention and feed-forward halves.
#[derive(Clone, Debug, PartialEq, Eq)]
struct DitBlock {
    shift1: Linear,
    scale1: Linear,
    gate1: Linear,
    shift2: Linear,
    scale2: Linear,
    gate2: Linear,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    mlp1: Linear,
    mlp2: Linear,
}

/// `LN(x) * (1 + scale) + shift` with `1 x W` modulation rows.
fn modulate<T: Scalar>(g: &mut Graph<T>, x: Var, shift: Var, scale: Var) -> Var {
    let xn = g.layer_norm(x, T::of(BLOCK_LN_EPS));
    let scaled = g.mul_row(xn, scale);
    let y = g.add(xn, scaled);
    g.add_row(y, shift)
}

impl DitBlock {
    fn new(init: &mut ParamInit, p: &str, w: usize, hidden: usize) -> Self {
        Self {
            shift1: Linear::zero(init, &format!("{p}.shift1"), w, w),
            scale1: Linear::zero(init, &format!("{p}.scale1"), w, w),
            gate1: Linear::zero(init, &format!("{p}.gate1"), w, w),
            shift2: Linear::zero(init, &format!("{p}.shift2"), w, w),
            scale2: Linear::zero(init, &format!("{p}.scale2"), w, w),
            gate2: Linear::zero(init, &format!("{p}.gate2"), w, w),
            q: Linear::new(init, &format!("{p}.q"), w, w),
            k: Linear { w: init.weight(&format!("{p}.k.w"), w, w), b: None },
            v: Linear::new(init, &format!("{p}.v"), w, w),
            o: Linear::new(init, &format!("{p}.o"), w, w),
            mlp1: Linear::new(init, &format!("{p}.mlp1"), w, hidden),
            mlp2: Linear::new(init, &format!("{p}.mlp2"), hidden, w),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, h: Var, emb: Var, heads: usize) -> Var {
        let (shift, scale, gate) = (self.shift1.apply(g, emb), self.scale1.apply(g, emb), self.gate1.apply(g, emb));
        let x = modulate(g, h, shift, scale);
        let (q, k, v) = (self.q.apply(g, x), self.k.apply(g, x), self.v.apply(g, x));
        let a = g.attention(q, k, v, heads, AttnKind::SelfAttn);
        let a = self.o.apply(g, a);
        let a = g.mul_row(a, gate);
        let h = g.add(h, a);
        let (shift, scale, gate) = (self.shift2.apply(g, emb), self.scale2.apply(g, emb), self.gate2.apply(g, emb));
        let x = modulate(g, h, shift, scale);
        let u = self.mlp1.apply(g, x);
        let u = g.gelu(u);
        let u = self.mlp2.apply(g, u);
        let u = g.mul_row(u, gate);
        g.add(h, u)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    slots: ParamId,
    input: Linear,
    cond_proj: Vec<Linear>,
    cond_attn: Vec<AttnBlock>,
    time1: Linear,
    time2: Linear,
    cond_vec: Option<Linear>,
    blocks: Vec<DitBlock>,
    final_shift: Linear,
    final_scale: Linear,
    output: Linear,
}

/// Sinusoidal features of the preconditioned noise level, frequencies
/// geometric from 1 to 100.
pub fn noise_features(c_noise: f64, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for k in 0..half {
        let f = if half > 1 { 100f64.powf(k as f64 / (half - 1) as f64) } else { 1.0 };
        out[k] = (f * c_noise).cos();
        out[half + k] = (f * c_noise).sin();
    }
    out
}

impl Denoiser {
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<(Self, ParamStore<f64>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = ParamInit::new(&mut store, seed);
        let (w, d, m) = (config.width, config.latent_channels, config.latent_count);
        let hidden = w * config.mlp_ratio;
        let slots = init.normal("slots", m, w, 0.5);
        let input = Linear::new(&mut init, "input", d, w);
        let mut cond_proj = Vec::new();
        let mut cond_attn = Vec::new();
        for (j, &(_, dj)) in config.coarser.iter().enumerate() {
            cond_proj.push(Linear::new(&mut init, &format!("cond{j}.proj"), dj, w));
            cond_attn.push(AttnBlock::init(&mut init, &format!("cond{j}.attn"), w, config.mlp_ratio, config.heads));
        }
        let time1 = Linear::new(&mut init, "time1", config.fourier_width, w);
        let time2 = Linear::new(&mut init, "time2", w, w);
        let cond_vec = (config.cond_dim > 0).then(|| Linear { w: init.weight("cond_vec.w", config.cond_dim, w), b: None });
        let blocks = (0..config.blocks).map(|k| DitBlock::new(&mut init, &format!("block{k}"), w, hidden)).collect();
        let final_shift = Linear::zero(&mut init, "final.shift", w, w);
        let final_scale = Linear::zero(&mut init, "final.scale", w, w);
        let output = Linear::zero(&mut init, "output", w, d);
        let model = Self { config, slots, input, cond_proj, cond_attn, time1, time2, cond_vec, blocks, final_shift, final_scale, output };
        Ok((model, store))
    }

    /// Rebuilds handles for `config` and checks `store` against them.
    pub fn bind<T: Scalar>(config: DenoiserConfig, store: &ParamStore<T>) -> Result<Self> {
        let (model, fresh) = Self::init(config, 0)?;
        let mut check = fresh.cast::<T>();
        check.load_from(store).map_err(Error::Format)?;
        Ok(model)
    }

    fn check_coarser<T: Scalar>(&self, coarser: &[Mat<T>]) -> Result<()> {
        if coarser.len() != self.config.coarser.len() {
            return Err(Error::contract(format!(
                "stage for level {} takes {} conditioning levels, got {}",
                self.config.level + 1,
                self.config.coarser.len(),
                coarser.len()
            )));
        }
        for (j, (z, &(m, d))) in coarser.iter().zip(&self.config.coarser).enumerate() {
            if z.dim() != (m, d) {
                return Err(Error::contract(format!("conditioning set {j} is {:?}, expected ({m}, {d})", z.dim())));
            }
        }
        Ok(())
    }

    /// `CA(... CA(h, Z_coarsest) ..., Z_next)`; the coarsest stage returns `h`.
    pub fn condition_stack<T: Scalar>(&self, g: &mut Graph<T>, h: Var, coarser: &[Mat<T>]) -> Result<Var> {
        self.check_coarser(coarser)?;
        let mut h = h;
        for ((z, proj), attn) in coarser.iter().zip(&self.cond_proj).zip(&self.cond_attn) {
            let z = g.constant(z.clone());
            let kv = proj.apply(g, z);
            h = attn.cross(g, h, kv);
        }
        Ok(h)
    }

    fn embedding<T: Scalar>(&self, g: &mut Graph<T>, c_noise: f64, cond: &[f64]) -> Result<Var> {
        if cond.len() != self.config.cond_dim {
            return Err(Error::contract(format!("condition vector has {} entries, expected {}", cond.len(), self.config.cond_dim)));
        }
        let f = noise_features(c_noise, self.config.fourier_width);
        let f = g.constant(Mat::from_shape_fn((1, f.len()), |(_, k)| T::of(f[k])));
        let e = self.time1.apply(g, f);
        let e = g.silu(e);
        let mut e = self.time2.apply(g, e);
        if let Some(cv) = &self.cond_vec {
            let c = g.constant(Mat::from_shape_fn((1, cond.len()), |(_, k)| T::of(cond[k])));
            let c = cv.apply(g, c);
            e = g.add(e, c);
        }
        Ok(g.silu(e))
    }

    /// Raw network output for the preconditioned input.
    fn network<T: Scalar>(&self, g: &mut Graph<T>, x_in: Var, c_noise: f64, cond: &[f64], coarser: &[Mat<T>]) -> Result<Var> {
        let h = self.input.apply(g, x_in);
        let slots = g.param(self.slots);
        let h = g.add(h, slots);
        let mut h = self.condition_stack(g, h, coarser)?;
        let emb = self.embedding(g, c_noise, cond)?;
        for b in &self.blocks {
            h = b.forward(g, h, emb, self.config.heads);
        }
        let (shift, scale) = (self.final_shift.apply(g, emb), self.final_scale.apply(g, emb));
        let x = modulate(g, h, shift, scale);
        Ok(self.output.apply(g, x))
    }

    /// Denoised estimate `c_skip * noisy + c_out * network(c_in * noisy, ...)`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, noisy: &Mat<T>, sigma: f64, cond: &[f64], coarser: &[Mat<T>]) -> Result<Var> {
        let (m, d) = (self.config.latent_count, self.config.latent_channels);
        if noisy.dim() != (m, d) {
            return Err(Error::contract(format!("noisy latents are {:?}, stage expects ({m}, {d})", noisy.dim())));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::contract(format!("noise level {sigma} must be positive and finite")));
        }
        let p = Preconditioning::new(sigma, self.config.sigma_data);
        let x_in = g.constant(noisy.mapv(|v| v * T::of(p.c_in)));
        let f = self.network(g, x_in, p.c_noise, cond, coarser)?;
        let f = g.scale(f, T::of(p.c_out));
        let skip = g.constant(noisy.mapv(|v| v * T::of(p.c_skip)));
        Ok(g.add(skip, f))
    }

    /// Forward-only denoised estimate.
    pub fn denoise<T: Scalar>(&self, store: &ParamStore<T>, noisy: &Mat<T>, sigma: f64, cond: &[f64], coarser: &[Mat<T>]) -> Result<Mat<T>> {
        let mut g = Graph::inference(store);
        let out = self.forward(&mut g, noisy, sigma, cond, coarser)?;
        Ok(g.value(out).clone())
    }

    /// Coarser levels of a full hierarchy (finest first) in conditioning order.
    pub fn coarser_of<'a, T>(&self, levels: &'a [Mat<T>]) -> Vec<&'a Mat<T>> {
        levels.iter().skip(self.config.level + 1).rev().collect()
    }
}

/// `lambda(sigma) * mean((denoised - clean)^2)` as a scalar node.
pub fn denoising_loss<T: Scalar>(g: &mut Graph<T>, denoised: Var, clean: &Mat<T>, sigma: f64, sigma_data: f64) -> Var {
    let c = g.constant(clean.clone());
    let diff = g.sub(denoised, c);
    let ss = g.sum_squares(diff);
    g.scale(ss, T::of(loss_weight(sigma, sigma_data) / clean.len() as f64))
}
