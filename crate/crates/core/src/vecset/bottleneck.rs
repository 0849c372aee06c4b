//! Standardization bottleneck between feature sets and latent sets.

use crate::autodiff::{Graph, Var};
use crate::params::{ParamId, ParamInit};
use crate::tensor::{Mat, Scalar};

pub const BOTTLENECK_EPS: f64 = 1e-6;

/// Projections of one level's bottleneck.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BottleneckParams {
    pub down_w: ParamId,
    pub down_b: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub up_w: ParamId,
    pub up_b: ParamId,
}

impl BottleneckParams {
    pub fn init(init: &mut ParamInit, prefix: &str, width: usize, channels: usize) -> Self {
        Self {
            down_w: init.weight(&format!("{prefix}.down.w"), width, channels),
            down_b: init.zeros(&format!("{prefix}.down.b"), 1, channels),
            gamma: init.constant(&format!("{prefix}.gamma"), 1, channels, 1.0),
            beta: init.zeros(&format!("{prefix}.beta"), 1, channels),
            up_w: init.weight(&format!("{prefix}.up.w"), channels, width),
            up_b: init.zeros(&format!("{prefix}.up.b"), 1, width),
        }
    }
}

/// Population mean and variance of each row.
pub fn row_moments<T: Scalar>(m: &Mat<T>) -> Vec<(f64, f64)> {
    m.rows()
        .into_iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().map(|&v| Scalar::to_f64(v)).sum::<f64>() / n;
            let var = r.iter().map(|&v| (Scalar::to_f64(v) - mean).powi(2)).sum::<f64>() / n;
            (mean, var)
        })
        .collect()
}

/// Per-row standardization with the bottleneck epsilon, outside any graph.
pub fn standardize_rows<T: Scalar>(m: &Mat<T>) -> Mat<T> {
    let mut g = Graph::<T>::detached();
    let v = g.constant(m.clone());
    let z = g.layer_norm(v, T::of(BOTTLENECK_EPS));
    g.value(z).clone()
}

/// Down-projection followed by per-vector standardization over channels,
/// `(z - mean) / sqrt(var + 1e-6)`.
pub fn ftol<T: Scalar>(g: &mut Graph<T>, x: Var, p: &BottleneckParams) -> Var {
    let (w, b) = (g.param(p.down_w), g.param(p.down_b));
    let z = g.linear(x, w, Some(b));
    let flat = row_moments(g.value(z)).iter().filter(|(_, v)| *v < BOTTLENECK_EPS).count();
    if flat > 0 {
        log::warn!("{flat} projected latent vectors have near-zero variance; standardization is eps-limited");
    }
    g.layer_norm(z, T::of(BOTTLENECK_EPS))
}

/// `FC_up(z * gamma + beta)`.
pub fn ltof<T: Scalar>(g: &mut Graph<T>, z: Var, p: &BottleneckParams) -> Var {
    let off = row_moments(g.value(z)).iter().filter(|(m, v)| m.abs() > 0.5 || (v - 1.0).abs() > 0.5).count();
    if off > 0 {
        log::debug!("{off} latent vectors are far from standardized");
    }
    let (gamma, beta, w, b) = (g.param(p.gamma), g.param(p.beta), g.param(p.up_w), g.param(p.up_b));
    let s = g.mul_row(z, gamma);
    let s = g.add_row(s, beta);
    g.linear(s, w, Some(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use ndarray::array;

    fn setup(width: usize, channels: usize) -> (ParamStore<f64>, BottleneckParams) {
        let mut store = ParamStore::new();
        let p = BottleneckParams::init(&mut ParamInit::new(&mut store, 1), "b", width, channels);
        (store, p)
    }

    #[test]
    fn standardizes_one_two_three() {
        let (mut store, p) = setup(3, 3);
        *store.get_mut(p.down_w) = Mat::eye(3);
        let mut g = Graph::new(&store);
        let x = g.constant(array![[1.0, 2.0, 3.0]]);
        let z = ftol(&mut g, x, &p);
        // Population variance 2/3; eps enters under the square root.
        let s = (2.0f64 / 3.0 + BOTTLENECK_EPS).sqrt();
        let expected = [-1.0 / s, 0.0, 1.0 / s];
        for (a, b) in g.value(z).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((g.value(z)[[0, 0]] + 1.2247).abs() < 1e-4);
    }

    #[test]
    fn outputs_are_standardized_and_scale_invariant() {
        let (store, p) = setup(16, 8);
        let x = Mat::from_shape_fn((20, 16), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 4.0 + 0.1 * i as f64);
        let run = |x: Mat<f64>| {
            let mut g = Graph::new(&store);
            let v = g.constant(x);
            let z = ftol(&mut g, v, &p);
            g.value(z).clone()
        };
        let z = run(x.clone());
        for (m, v) in row_moments(&z) {
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-4, "mean {m} var {v}");
        }
        // The down projection has zero bias at init, so scaling x scales the projection.
        let z10 = run(x * 10.0);
        assert!((&z - &z10).iter().all(|d| d.abs() < 1e-6));
    }

    #[test]
    fn identity_affine_and_padded_up_projection_recovers_latent() {
        let (mut store, p) = setup(6, 3);
        let mut up = Mat::zeros((3, 6));
        for i in 0..3 {
            up[[i, i]] = 1.0;
        }
        *store.get_mut(p.up_w) = up;
        let zv = array![[0.5, -1.0, 2.0], [1.0, 0.0, -1.0]];
        let mut g = Graph::new(&store);
        let z = g.constant(zv.clone());
        let x = ltof(&mut g, z, &p);
        assert_eq!(g.value(x).slice(ndarray::s![.., ..3]), zv);
        assert!(g.value(x).slice(ndarray::s![.., 3..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_latent_zero_shift_gives_zero() {
        let (store, p) = setup(8, 4);
        let mut g = Graph::new(&store);
        let z = g.constant(Mat::zeros((3, 4)));
        let x = ltof(&mut g, z, &p);
        assert!(g.value(x).iter().all(|&v| v == 0.0));
    }
}
