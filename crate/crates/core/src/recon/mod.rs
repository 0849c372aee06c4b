//! Mesh extraction from a trained occupancy field, reconstruction metrics,
//! and latent replacement probes.

pub mod marching;
pub mod metrics;

pub use marching::{marching_cubes, ExtractConfig, ExtractReport};
pub use metrics::{chamfer, chamfer_brute, fscore, read_reports, summary_table, write_reports, MetricReport, DEFAULT_SAMPLES, DEFAULT_TAU};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{Point3, TriangleMesh};
use crate::tensor::Mat;
use crate::training::TrainedAutoencoder;
use crate::vecset::LatentHierarchy;

/// Extracts the zero-logit surface (occupancy probability one half) of a
/// decoded latent hierarchy.
pub fn extract_mesh(model: &TrainedAutoencoder, latents: &LatentHierarchy<f32>, config: &ExtractConfig) -> Result<(TriangleMesh, ExtractReport)> {
    let features = model.model.decode(&model.store, latents)?;
    let field = |pts: &[Point3]| -> Result<Vec<f64>> {
        Ok(model.model.query(&model.store, &features, pts)?.into_iter().map(f64::from).collect())
    };
    marching_cubes(field, &ExtractConfig { iso: 0.0, ..config.clone() })
}

/// Replaces the levels selected by `mask` (finest first) with standard normal
/// sets of the same shape.
pub fn replace_levels<R: Rng + ?Sized>(latents: &LatentHierarchy<f32>, mask: &[bool], rng: &mut R) -> Result<LatentHierarchy<f32>> {
    if mask.len() != latents.levels.len() {
        return Err(Error::contract(format!("mask has {} entries for {} levels", mask.len(), latents.levels.len())));
    }
    let levels = latents
        .levels
        .iter()
        .zip(mask)
        .map(|(z, &replace)| {
            if replace {
                Mat::from_shape_fn(z.dim(), |_| {
                    let e: f32 = StandardNormal.sample(rng);
                    e
                })
            } else {
                z.clone()
            }
        })
        .collect();
    Ok(LatentHierarchy { levels })
}

/// Encodes `points`, swaps the masked levels for Gaussian noise, decodes and
/// extracts a mesh.
pub fn latent_noise_replacement<R: Rng + ?Sized>(
    model: &TrainedAutoencoder,
    points: &[Point3],
    mask: &[bool],
    config: &ExtractConfig,
    rng: &mut R,
) -> Result<(TriangleMesh, ExtractReport)> {
    let latents = model.encode(points)?;
    let replaced = replace_levels(&latents, mask, rng)?;
    extract_mesh(model, &replaced, config)
}
