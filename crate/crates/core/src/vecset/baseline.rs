//! Single-level set-latent pipeline written out directly, without the level
//! loop. Serves as the reference that a one-level hierarchical model must
//! reproduce exactly.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::Point3;

use super::blocks::self_attention_stack;
use super::bottleneck::{ftol, ltof};
use super::fps::fps;
use super::model::HierarchicalModel;

/// Every intermediate of one flat forward pass.
pub struct FlatTrace {
    pub anchors: Vec<usize>,
    pub input_embed: Var,
    pub anchor_embed: Var,
    pub features: Var,
    pub latents: Var,
    pub expanded: Var,
    pub decoded: Var,
    pub query_embed: Var,
    pub query_features: Var,
    pub logits: Var,
}

/// `X = CA(embed(FPS(P)), embed(P))`, `Z = ftol(X)`, `F = SAs(ltof(Z))`,
/// `logit(p) = FC(CA(embed(p), F))`, using the parameters of a one-level model.
pub fn flat_forward<T: crate::tensor::Scalar>(
    model: &HierarchicalModel,
    g: &mut Graph<T>,
    points: &[Point3],
    queries: &[Point3],
) -> Result<FlatTrace> {
    if model.num_levels() != 1 {
        return Err(Error::contract("flat pipeline needs a single-level model"));
    }
    let level = &model.levels[0];
    let anchors = fps(points, model.config.levels[0].latent_count, model.config.fps_seed_index)?;
    let input_embed = model.embed_points(g, points)?;
    let anchor_pts: Vec<Point3> = anchors.iter().map(|&k| points[k]).collect();
    let anchor_embed = model.embed_points(g, &anchor_pts)?;
    let features = level.encoder.cross(g, anchor_embed, input_embed);
    let latents = ftol(g, features, &level.bottleneck);
    let expanded = ltof(g, latents, &level.bottleneck);
    let decoded = self_attention_stack(g, &level.self_attn, expanded);
    let query_embed = model.embed_points(g, queries)?;
    let query_features = level.query.cross(g, query_embed, decoded);
    let (w, b) = (g.param(model.head_w), g.param(model.head_b));
    let logits = g.linear(query_features, w, Some(b));
    Ok(FlatTrace { anchors, input_embed, anchor_embed, features, latents, expanded, decoded, query_embed, query_features, logits })
}
