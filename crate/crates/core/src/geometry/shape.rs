//! The per-shape training record and the mesh-to-record pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{apply_augmentation, AugmentationParams};
use super::mesh::{Point3, TriangleMesh};
use super::occupancy::OccupancyOracle;
use super::sampling::{sample_near_points, sample_volume_points, N_VOL};
use crate::error::{Error, Result};

pub type Point3f = [f32; 3];

/// Surface samples plus labeled volume and near-surface queries. Coordinates
/// are stored in single precision so shard round trips are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledShape {
    pub name: String,
    pub surface_points: Vec<Point3f>,
    pub vol_queries: Vec<Point3f>,
    pub vol_labels: Vec<bool>,
    pub near_queries: Vec<Point3f>,
    pub near_labels: Vec<bool>,
}

impl SampledShape {
    pub fn validate(&self) -> Result<()> {
        if self.vol_queries.len() != self.vol_labels.len() || self.near_queries.len() != self.near_labels.len() {
            return Err(Error::contract(format!("shape {:?}: query/label length mismatch", self.name)));
        }
        Ok(())
    }

    pub fn surface_f64(&self) -> Vec<Point3> {
        self.surface_points.iter().map(|p| to_f64(*p)).collect()
    }

    pub fn positives(&self) -> usize {
        self.vol_labels.iter().chain(&self.near_labels).filter(|&&l| l).count()
    }
}

pub fn to_f32(p: Point3) -> Point3f {
    [p[0] as f32, p[1] as f32, p[2] as f32]
}

pub fn to_f64(p: Point3f) -> Point3 {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub surface_points: usize,
    pub vol_points: usize,
    /// Surface points that are jittered; the near pool is twice this size.
    pub near_base_points: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { surface_points: 8192, vol_points: N_VOL, near_base_points: 8192, augment: false, seed: 0 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("surface_points", self.surface_points),
            ("vol_points", self.vol_points),
            ("near_base_points", self.near_base_points),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Diagnostics from preprocessing one mesh.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub name: String,
    pub triangles: usize,
    pub degenerate_triangles: usize,
    pub vol_positive: usize,
    pub near_positive: usize,
    pub unreliable_labels: usize,
    pub watertight: bool,
}

/// Normalizes, optionally augments, samples and labels one mesh. `task_seed`
/// makes each mesh independent of processing order.
pub fn preprocess_mesh(
    name: &str,
    mesh: &TriangleMesh,
    config: &PreprocessConfig,
    task_seed: u64,
) -> Result<(SampledShape, PreprocessReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ task_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut mesh = mesh.normalize_unit_sphere()?;
    if config.augment {
        mesh = apply_augmentation(&mesh, &AugmentationParams::random(&mut rng))?;
    }
    let surface = mesh.sample_surface(config.surface_points, &mut rng)?;
    let near_base = mesh.sample_surface(config.near_base_points, &mut rng)?;
    let vol = sample_volume_points(config.vol_points, &mut rng);
    let near = sample_near_points(&near_base, &mut rng);

    let oracle = OccupancyOracle::new(&mesh);
    let vol_l = oracle.label(&vol);
    let near_l = oracle.label(&near);
    let unreliable = vol_l.unreliable.len() + near_l.unreliable.len();
    if unreliable > 0 {
        log::warn!("{name}: {unreliable} unreliable occupancy labels");
    }
    let report = PreprocessReport {
        name: name.to_string(),
        triangles: mesh.triangles.len(),
        degenerate_triangles: mesh.degenerate_triangles().len(),
        vol_positive: vol_l.inside.iter().filter(|&&b| b).count(),
        near_positive: near_l.inside.iter().filter(|&&b| b).count(),
        unreliable_labels: unreliable,
        watertight: mesh.is_watertight(),
    };
    let shape = SampledShape {
        name: name.to_string(),
        surface_points: surface.into_iter().map(to_f32).collect(),
        vol_queries: vol.into_iter().map(to_f32).collect(),
        vol_labels: vol_l.inside,
        near_queries: near.into_iter().map(to_f32).collect(),
        near_labels: near_l.inside,
    };
    Ok((shape, report))
}
