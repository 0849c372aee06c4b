//! Pool-weighted binary cross entropy on occupancy logits.

use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_term, Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::QueryPool;
use crate::tensor::Scalar;

/// Weight of the near-surface term relative to the volume term.
pub const NEAR_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vol_bce: f64,
    pub near_bce: f64,
    /// `vol_bce + 0.1 * near_bce`.
    pub total: f64,
    pub positives_fraction: f64,
}

impl LossBreakdown {
    fn from_terms(vol_bce: f64, near_bce: f64, positives_fraction: f64) -> Self {
        Self { vol_bce, near_bce, total: vol_bce + NEAR_WEIGHT * near_bce, positives_fraction }
    }

    /// Mean of several breakdowns, recombined with the same formula.
    pub fn mean(parts: &[LossBreakdown]) -> Self {
        let n = parts.len().max(1) as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
        Self::from_terms(avg(|b| b.vol_bce), avg(|b| b.near_bce), avg(|b| b.positives_fraction))
    }
}

fn check_lengths(n: usize, labels: usize, pools: usize) -> Result<()> {
    if n != labels || n != pools {
        return Err(Error::contract(format!("{n} logits, {labels} labels, {pools} pool tags")));
    }
    Ok(())
}

fn pool_counts(pools: &[QueryPool]) -> (usize, usize) {
    let vol = pools.iter().filter(|&&p| p == QueryPool::Volume).count();
    (vol, pools.len() - vol)
}

/// Mean BCE within each pool. An empty pool contributes 0.
pub fn bce_occupancy_loss(logits: &[f64], labels: &[bool], pools: &[QueryPool]) -> Result<LossBreakdown> {
    check_lengths(logits.len(), labels.len(), pools.len())?;
    let (mut vol, mut near) = (0.0, 0.0);
    for ((&x, &y), &p) in logits.iter().zip(labels).zip(pools) {
        let term = bce_term(x, if y { 1.0 } else { 0.0 });
        match p {
            QueryPool::Volume => vol += term,
            QueryPool::Near => near += term,
        }
    }
    let (nv, nn) = pool_counts(pools);
    if nv == 0 || nn == 0 {
        log::debug!("empty query pool in loss (volume {nv}, near {nn})");
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let pos = labels.iter().filter(|&&l| l).count() as f64 / labels.len().max(1) as f64;
    Ok(LossBreakdown::from_terms(mean(vol, nv), mean(near, nn), pos))
}

/// Differentiable form of [`bce_occupancy_loss`] scaled by `scale`. Returns
/// the scalar loss node and the unscaled breakdown.
pub fn occupancy_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[bool],
    pools: &[QueryPool],
    scale: f64,
) -> Result<(Var, LossBreakdown)> {
    check_lengths(g.value(logits).nrows(), labels.len(), pools.len())?;
    let (nv, nn) = pool_counts(pools);
    let weights = pools
        .iter()
        .map(|p| match p {
            QueryPool::Volume => T::of(scale / nv as f64),
            QueryPool::Near => T::of(scale * NEAR_WEIGHT / nn as f64),
        })
        .collect();
    let targets = labels.iter().map(|&l| if l { T::one() } else { T::zero() }).collect();
    let node = g.bce_with_logits(logits, targets, weights);
    let values: Vec<f64> = g.value(logits).iter().map(|&v| v.to_f64()).collect();
    Ok((node, bce_occupancy_loss(&values, labels, pools)?))
}
