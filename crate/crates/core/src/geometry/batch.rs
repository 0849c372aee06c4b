//! Label-balanced query batches.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::shape::{Point3f, SampledShape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryPool {
    Volume,
    Near,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortfallReport {
    pub shape: String,
    pub wanted_per_label: usize,
    pub positives_available: usize,
    pub negatives_available: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryBatch {
    pub points: Vec<Point3f>,
    pub labels: Vec<bool>,
    pub pools: Vec<QueryPool>,
    /// Set when a label class had fewer candidates than half the batch.
    pub shortfall: Option<ShortfallReport>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `batch / 2` inside and `batch / 2` outside queries, each uniformly
/// without replacement from the union of the volume and near pools carrying
/// that label. When a class runs short every candidate of that class is
/// taken, the other class is capped to the same count, and a shortfall report
/// is attached.
pub fn balanced_query_batch<R: Rng + ?Sized>(shape: &SampledShape, batch: usize, rng: &mut R) -> Result<QueryBatch> {
    shape.validate()?;
    if batch == 0 || !batch.is_multiple_of(2) {
        return Err(Error::contract(format!("batch size {batch} must be even and positive")));
    }
    let half = batch / 2;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let tagged = shape
        .vol_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (QueryPool::Volume, i, l))
        .chain(shape.near_labels.iter().enumerate().map(|(i, &l)| (QueryPool::Near, i, l)));
    for (pool, i, l) in tagged {
        if l { pos.push((pool, i)) } else { neg.push((pool, i)) }
    }
    let take = half.min(pos.len()).min(neg.len());
    let shortfall = (take < half).then(|| {
        let r = ShortfallReport {
            shape: shape.name.clone(),
            wanted_per_label: half,
            positives_available: pos.len(),
            negatives_available: neg.len(),
        };
        log::warn!("{}: balanced batch short ({} positive, {} negative, {half} wanted)", r.shape, r.positives_available, r.negatives_available);
        r
    });
    let mut out = QueryBatch { points: Vec::with_capacity(2 * take), labels: Vec::new(), pools: Vec::new(), shortfall };
    for (candidates, label) in [(&pos, true), (&neg, false)] {
        for k in sample(rng, candidates.len(), take) {
            let (pool, i) = candidates[k];
            let p = match pool {
                QueryPool::Volume => shape.vol_queries[i],
                QueryPool::Near => shape.near_queries[i],
            };
            out.points.push(p);
            out.labels.push(label);
            out.pools.push(pool);
        }
    }
    Ok(out)
}
