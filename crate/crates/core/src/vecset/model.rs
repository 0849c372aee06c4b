//! The hierarchical set-latent occupancy autoencoder.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::params::{ParamId, ParamInit, ParamStore};
use crate::tensor::{Mat, Scalar};

use super::blocks::{self, AttnBlock};
use super::bottleneck::{self, row_moments, BottleneckParams};
use super::config::ModelConfig;
use super::embed::positional_embed;
use super::fps::fps;

/// Standardized latent sets, finest level first.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentHierarchy<T = f32> {
    pub levels: Vec<Mat<T>>,
}

impl<T: Scalar> LatentHierarchy<T> {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Largest `|mean|` and `|var - 1|` over all latent vectors.
    pub fn standardization_error(&self) -> (f64, f64) {
        let mut worst = (0.0f64, 0.0f64);
        for m in &self.levels {
            for (mean, var) in row_moments(m) {
                worst.0 = worst.0.max(mean.abs());
                worst.1 = worst.1.max((var - 1.0).abs());
            }
        }
        worst
    }

    pub fn cast<U: Scalar>(&self) -> LatentHierarchy<U> {
        LatentHierarchy { levels: self.levels.iter().map(crate::tensor::cast).collect() }
    }
}

/// Parameter handles of one level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelParams {
    pub encoder: AttnBlock,
    pub bottleneck: BottleneckParams,
    /// Cross attention from this level's features into the coarser level's
    /// decoded features; absent on the coarsest level.
    pub upsample: Option<AttnBlock>,
    pub self_attn: Vec<AttnBlock>,
    pub query: AttnBlock,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalModel {
    pub config: ModelConfig,
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub levels: Vec<LevelParams>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Graph nodes produced by the encoder.
pub struct Encoded {
    /// Standardized latents `Z_i`, finest first.
    pub latents: Vec<Var>,
    /// Pre-bottleneck features `X_i`.
    pub features: Vec<Var>,
}

impl HierarchicalModel {
    /// Builds parameter handles and a freshly initialized store.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<f64>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = ParamInit::new(&mut store, seed);
        let (c, r, h) = (config.width, config.mlp_ratio, config.heads);
        let embed_w = init.weight("point_embed.w", config.pe_width, c);
        let embed_b = init.zeros("point_embed.b", 1, c);
        let n = config.levels.len();
        let mut levels = Vec::with_capacity(n);
        for (i, lc) in config.levels.iter().enumerate() {
            let p = format!("level{}", i + 1);
            levels.push(LevelParams {
                encoder: AttnBlock::init(&mut init, &format!("{p}.encoder"), c, r, h),
                bottleneck: BottleneckParams::init(&mut init, &format!("{p}.bottleneck"), c, lc.latent_channels),
                upsample: (i + 1 < n).then(|| AttnBlock::init(&mut init, &format!("{p}.upsample"), c, r, h)),
                self_attn: (0..lc.sa_layers).map(|k| AttnBlock::init(&mut init, &format!("{p}.sa{k}"), c, r, h)).collect(),
                query: AttnBlock::init(&mut init, &format!("{p}.query"), c, r, h),
            });
        }
        let head_w = init.weight("head.w", n * c, 1);
        let head_b = init.zeros("head.b", 1, 1);
        Ok((Self { config, embed_w, embed_b, levels, head_w, head_b }, store))
    }

    /// Rebuilds handles for `config` and checks that `store` matches them by
    /// name and shape.
    pub fn bind<T: Scalar>(config: ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let (model, fresh) = Self::init(config, 0)?;
        let mut check = fresh.cast::<T>();
        check.load_from(store).map_err(Error::Format)?;
        Ok(model)
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Sinusoidal embedding followed by the shared learned projection.
    pub fn embed_points<T: Scalar>(&self, g: &mut Graph<T>, points: &[Point3]) -> Result<Var> {
        let pe = positional_embed::<T>(points, self.config.pe_width, self.config.pe_base_freq)?;
        let pe = g.constant(pe);
        let (w, b) = (g.param(self.embed_w), g.param(self.embed_b));
        Ok(g.linear(pe, w, Some(b)))
    }

    /// Farthest-point anchor chain. Entry `i` holds indices into `points` of
    /// level `i`'s anchors, each set a farthest point subsample of the
    /// previous one.
    pub fn select_anchors(&self, points: &[Point3]) -> Result<Vec<Vec<usize>>> {
        let need = self.config.min_input_points();
        if points.len() < need {
            return Err(Error::contract(format!("{} input points, encoder needs at least {need}", points.len())));
        }
        let mut out: Vec<Vec<usize>> = Vec::with_capacity(self.num_levels());
        for (i, lc) in self.config.levels.iter().enumerate() {
            let idx = if i == 0 {
                fps(points, lc.latent_count, self.config.fps_seed_index)?
            } else {
                let prev = &out[i - 1];
                let prev_pts: Vec<Point3> = prev.iter().map(|&k| points[k]).collect();
                fps(&prev_pts, lc.latent_count, 0)?.into_iter().map(|k| prev[k]).collect()
            };
            out.push(idx);
        }
        Ok(out)
    }

    /// `X_1 = CA(embed(P_1), embed(P_0))`, `X_i = CA(embed(P_i), X_{i-1})`,
    /// `Z_i = ftol(X_i)`.
    pub fn encode_hierarchy<T: Scalar>(&self, g: &mut Graph<T>, points: &[Point3], anchors: &[Vec<usize>]) -> Result<Encoded> {
        if anchors.len() != self.num_levels() {
            return Err(Error::contract(format!("{} anchor sets for {} levels", anchors.len(), self.num_levels())));
        }
        let mut kv = self.embed_points(g, points)?;
        let mut enc = Encoded { latents: Vec::new(), features: Vec::new() };
        for (lp, idx) in self.levels.iter().zip(anchors) {
            let anchor_pts: Vec<Point3> = idx.iter().map(|&k| points[k]).collect();
            let q = self.embed_points(g, &anchor_pts)?;
            let x = lp.encoder.cross(g, q, kv);
            enc.latents.push(bottleneck::ftol(g, x, &lp.bottleneck));
            enc.features.push(x);
            kv = x;
        }
        Ok(enc)
    }

    /// `F_L = SAs(ltof(Z_L))`, `F_i = SAs(CA(ltof(Z_i), F_{i+1}))`; returned
    /// finest first.
    pub fn decode_features<T: Scalar>(&self, g: &mut Graph<T>, latents: &[Var]) -> Result<Vec<Var>> {
        if latents.len() != self.num_levels() {
            return Err(Error::contract(format!("{} latent sets for {} levels", latents.len(), self.num_levels())));
        }
        for (i, (&z, lc)) in latents.iter().zip(&self.config.levels).enumerate() {
            if g.value(z).ncols() != lc.latent_channels {
                return Err(Error::contract(format!(
                    "level {} latents have {} channels, expected {}",
                    i + 1,
                    g.value(z).ncols(),
                    lc.latent_channels
                )));
            }
        }
        let mut features = vec![None; self.num_levels()];
        let mut coarser: Option<Var> = None;
        for (i, lp) in self.levels.iter().enumerate().rev() {
            let mut x = bottleneck::ltof(g, latents[i], &lp.bottleneck);
            if let (Some(up), Some(f)) = (&lp.upsample, coarser) {
                x = up.cross(g, x, f);
            }
            let f = blocks::self_attention_stack(g, &lp.self_attn, x);
            features[i] = Some(f);
            coarser = Some(f);
        }
        Ok(features.into_iter().map(|f| f.expect("every level decoded")).collect())
    }

    /// `FC([CA(p, F_1) | ... | CA(p, F_L)])`, one logit per query.
    pub fn query_occupancy<T: Scalar>(&self, g: &mut Graph<T>, queries: &[Point3], features: &[Var]) -> Result<Var> {
        if features.len() != self.num_levels() {
            return Err(Error::contract(format!("{} feature sets for {} levels", features.len(), self.num_levels())));
        }
        let q = self.embed_points(g, queries)?;
        let parts: Vec<Var> = self.levels.iter().zip(features).map(|(lp, &f)| lp.query.cross(g, q, f)).collect();
        let cat = g.concat_cols(&parts);
        let (w, b) = (g.param(self.head_w), g.param(self.head_b));
        Ok(g.linear(cat, w, Some(b)))
    }

    /// Forward-only encoding of a point cloud.
    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, points: &[Point3]) -> Result<LatentHierarchy<T>> {
        let anchors = self.select_anchors(points)?;
        let mut g = Graph::inference(store);
        let enc = self.encode_hierarchy(&mut g, points, &anchors)?;
        Ok(LatentHierarchy { levels: enc.latents.iter().map(|&z| g.value(z).clone()).collect() })
    }

    /// Forward-only decoding of a latent hierarchy into per-level features.
    pub fn decode<T: Scalar>(&self, store: &ParamStore<T>, latents: &LatentHierarchy<T>) -> Result<Vec<Mat<T>>> {
        let mut g = Graph::inference(store);
        let z: Vec<Var> = latents.levels.iter().map(|m| g.constant(m.clone())).collect();
        let f = self.decode_features(&mut g, &z)?;
        Ok(f.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Forward-only occupancy logits, evaluated in chunks.
    pub fn query<T: Scalar>(&self, store: &ParamStore<T>, features: &[Mat<T>], queries: &[Point3]) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(self.config.query_chunk) {
            let mut g = Graph::inference(store);
            let f: Vec<Var> = features.iter().map(|m| g.constant(m.clone())).collect();
            let logits = self.query_occupancy(&mut g, chunk, &f)?;
            out.extend(g.value(logits).iter().copied());
        }
        Ok(out)
    }
}
