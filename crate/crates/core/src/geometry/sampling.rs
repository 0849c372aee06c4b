//! Volume and near-surface query sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use super::mesh::Point3;

/// Paper-scale pool sizes.
pub const N_VOL: usize = 250_000;
pub const N_NEAR: usize = 125_000;
/// Per-coordinate jitter of the two near-surface pools.
pub const NEAR_SCALES: [f64; 2] = [0.005, 0.05];

pub const BOUNDING_RADIUS: f64 = 1.732_050_807_568_877_2; // sqrt(3)

/// Uniform samples in the ball of radius sqrt(3): a normalized Gaussian
/// direction scaled by `sqrt(3) * U^(1/3)`.
pub fn sample_volume_points<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<Point3> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let d: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if n == 0.0 {
            continue;
        }
        let r = BOUNDING_RADIUS * rng.random::<f64>().cbrt() / n;
        out.push([d[0] * r, d[1] * r, d[2] * r]);
    }
    out
}

/// Gaussian-jittered copies of the surface points, first at scale 0.005 then
/// at 0.05. Output length is twice the input.
pub fn sample_near_points<R: Rng + ?Sized>(surface: &[Point3], rng: &mut R) -> Vec<Point3> {
    jitter_points(surface, || rng.sample(StandardNormal))
}

/// Same as [`sample_near_points`] with an explicit standard-normal source.
pub fn jitter_points(surface: &[Point3], mut std_normal: impl FnMut() -> f64) -> Vec<Point3> {
    let mut out = Vec::with_capacity(surface.len() * 2);
    for scale in NEAR_SCALES {
        for p in surface {
            out.push([
                p[0] + scale * std_normal(),
                p[1] + scale * std_normal(),
                p[2] + scale * std_normal(),
            ]);
        }
    }
    out
}
