//! Central-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::Result;
use crate::geometry::{sample_volume_points, Point3, QueryPool};
use crate::params::ParamStore;
use crate::tensor::Mat;
use crate::vecset::{HierarchicalModel, ModelConfig};

use super::loss::occupancy_loss_node;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    /// `max |analytic - numeric| / max(max |analytic|, max |numeric|)`.
    pub rel_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
    pub worst_group: Option<String>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic(store)` against central differences of `loss` for
/// every scalar of every parameter group.
pub fn check_gradients(
    store: &ParamStore<f64>,
    loss: impl Fn(&ParamStore<f64>) -> f64,
    analytic: &[Mat<f64>],
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    let mut probe = store.clone();
    let mut groups = Vec::with_capacity(store.len());
    for (id, grad) in store.ids().zip(analytic) {
        let mut max_diff = 0.0f64;
        let mut max_a = 0.0f64;
        let mut max_n = 0.0f64;
        for idx in 0..grad.len() {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let orig = probe.get(id)[[r, c]];
            probe.get_mut(id)[[r, c]] = orig + step;
            let up = loss(&probe);
            probe.get_mut(id)[[r, c]] = orig - step;
            let down = loss(&probe);
            probe.get_mut(id)[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = grad[[r, c]];
            max_diff = max_diff.max((a - numeric).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(numeric.abs());
        }
        let scale = max_a.max(max_n);
        let rel_error = if scale == 0.0 { 0.0 } else { max_diff / scale };
        groups.push(GroupError { name: store.name(id).to_string(), rel_error, max_abs_analytic: max_a });
    }
    let worst = groups.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
    let max_rel_error = worst.map_or(0.0, |g| g.rel_error);
    GradCheckReport {
        worst_group: worst.map(|g| g.name.clone()),
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
        groups,
    }
}

/// Fixed inputs for the model-level check.
pub struct GradCheckCase {
    pub points: Vec<Point3>,
    pub anchors: Vec<Vec<usize>>,
    pub queries: Vec<Point3>,
    pub labels: Vec<bool>,
    pub pools: Vec<QueryPool>,
}

impl GradCheckCase {
    pub fn new(model: &HierarchicalModel, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = sample_volume_points(2 * model.config.min_input_points(), &mut rng);
        let anchors = model.select_anchors(&points)?;
        let queries = sample_volume_points(12, &mut rng);
        let labels = (0..queries.len()).map(|k| k % 2 == 0).collect();
        let pools = (0..queries.len()).map(|k| if k % 3 == 0 { QueryPool::Near } else { QueryPool::Volume }).collect();
        Ok(Self { points, anchors, queries, labels, pools })
    }

    /// Full encode, decode, query and loss; returns the loss and, when
    /// requested, every parameter gradient.
    pub fn evaluate(&self, model: &HierarchicalModel, store: &ParamStore<f64>, with_grads: bool) -> Result<(f64, Vec<Mat<f64>>)> {
        let mut g = if with_grads { Graph::new(store) } else { Graph::inference(store) };
        let enc = model.encode_hierarchy(&mut g, &self.points, &self.anchors)?;
        let feats = model.decode_features(&mut g, &enc.latents)?;
        let logits = model.query_occupancy(&mut g, &self.queries, &feats)?;
        let (loss, _) = occupancy_loss_node(&mut g, logits, &self.labels, &self.pools, 1.0)?;
        let value = g.scalar(loss);
        if !with_grads {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(loss);
        Ok((value, g.param_grads(&grads)))
    }
}

/// Double-precision gradient check of the full model. `corrupt` names a
/// parameter whose analytic gradient is perturbed, to exercise the harness.
pub fn gradient_check(config: &ModelConfig, seed: u64, tolerance: f64, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let (model, store) = HierarchicalModel::init(config.clone(), seed)?;
    let case = GradCheckCase::new(&model, seed ^ 0x5eed)?;
    let (_, mut analytic) = case.evaluate(&model, &store, true)?;
    if let Some(name) = corrupt {
        if let Some(id) = store.id_of(name) {
            analytic[id.index()].mapv_inplace(|g| g * 1.01 + 1e-3);
        }
    }
    let loss = |s: &ParamStore<f64>| case.evaluate(&model, s, false).map(|r| r.0).unwrap_or(f64::NAN);
    Ok(check_gradients(&store, loss, &analytic, DEFAULT_STEP, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecset::LevelConfig;
    use ndarray::array;

    #[test]
    fn empty_store_passes_vacuously() {
        let store = ParamStore::<f64>::new();
        let r = check_gradients(&store, |_| 0.0, &[], DEFAULT_STEP, DEFAULT_TOLERANCE);
        assert!(r.passed && r.groups.is_empty() && r.max_rel_error == 0.0);
    }

    #[test]
    fn quadratic_oracle() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", array![[1.5, -0.5, 2.0]]);
        let loss = |s: &ParamStore<f64>| s.iter().map(|(_, m)| m.iter().map(|x| x * x * x).sum::<f64>()).sum::<f64>();
        let good = vec![array![[3.0 * 2.25, 3.0 * 0.25, 12.0]]];
        assert!(check_gradients(&store, loss, &good, DEFAULT_STEP, 1e-8).passed);
        let bad = vec![array![[3.0 * 2.25, 3.0 * 0.25, 12.1]]];
        let r = check_gradients(&store, loss, &bad, DEFAULT_STEP, 1e-4);
        assert!(!r.passed);
        assert_eq!(r.worst_group.as_deref(), Some("w"));
    }

    #[test]
    fn small_model_passes_and_corruption_is_named() {
        let config = ModelConfig {
            heads: 2,
            mlp_ratio: 1,
            pe_width: 6,
            ..ModelConfig::new(8, vec![LevelConfig::new(6, 3, 1), LevelConfig::new(3, 3, 1)])
        };
        let r = gradient_check(&config, 1, DEFAULT_TOLERANCE, None).unwrap();
        assert!(r.passed, "{:?} {}", r.worst_group, r.max_rel_error);
        let r = gradient_check(&config, 1, DEFAULT_TOLERANCE, Some("level2.sa0.mlp1.w")).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_group.as_deref(), Some("level2.sa0.mlp1.w"));
    }
}
