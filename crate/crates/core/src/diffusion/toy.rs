//! Synthetic two-mode latent distribution for checking the cascade.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::tensor::{cast, Mat, Scalar};
use crate::vecset::bottleneck::standardize_rows;
use crate::vecset::{LatentHierarchy, LevelConfig};

use super::train::LatentRecord;

/// Two fixed standardized hierarchies; samples are a mode plus isotropic noise.
#[derive(Clone, Debug)]
pub struct TwoModeToy {
    pub modes: [LatentHierarchy<f64>; 2],
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeRecovery {
    /// Samples assigned to each mode by nearest distance over all levels.
    pub counts: [usize; 2],
    /// Root mean square difference between the mean of each mode's samples
    /// and the mode, over all entries.
    pub rms_mean_error: [f64; 2],
    /// Largest entrywise difference between the mean of each mode's samples
    /// and the mode.
    pub max_mean_error: [f64; 2],
    /// Fraction of samples whose per-level nearest modes all agree.
    pub level_consistency: f64,
}

fn sq_dist<T: Scalar>(a: &Mat<T>, b: &Mat<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (Scalar::to_f64(x) - y).powi(2)).sum()
}

impl TwoModeToy {
    pub fn new(levels: &[LevelConfig], noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mode = || LatentHierarchy {
            levels: levels
                .iter()
                .map(|l| {
                    let m = Mat::from_shape_fn((l.latent_count, l.latent_channels), |_| StandardNormal.sample(&mut rng));
                    standardize_rows(&m)
                })
                .collect(),
        };
        Self { modes: [mode(), mode()], noise }
    }

    /// A mode index drawn uniformly and a noisy copy of that mode.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, LatentHierarchy<f64>) {
        let k = rng.random_range(0..2);
        let levels = self.modes[k]
            .levels
            .iter()
            .map(|m| m.mapv(|v| v + { let e: f64 = StandardNormal.sample(rng); self.noise * e }))
            .collect();
        (k, LatentHierarchy { levels })
    }

    pub fn records<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<LatentRecord> {
        (0..count).map(|_| LatentRecord { latents: self.sample(rng).1.cast(), cond: Vec::new() }).collect()
    }

    fn nearest_at(&self, level: usize, z: &Mat<impl Scalar>) -> usize {
        usize::from(sq_dist(z, &self.modes[1].levels[level]) < sq_dist(z, &self.modes[0].levels[level]))
    }

    pub fn nearest_mode<T: Scalar>(&self, h: &LatentHierarchy<T>) -> usize {
        let d = |k: usize| h.levels.iter().zip(&self.modes[k].levels).map(|(a, b)| sq_dist(a, b)).sum::<f64>();
        usize::from(d(1) < d(0))
    }

    pub fn recovery<T: Scalar>(&self, samples: &[LatentHierarchy<T>]) -> ModeRecovery {
        let mut counts = [0usize; 2];
        let mut sums: [Vec<Mat<f64>>; 2] = [0, 1].map(|k| self.modes[k].levels.iter().map(|m| Mat::zeros(m.dim())).collect());
        let mut consistent = 0usize;
        for h in samples {
            let k = self.nearest_mode(h);
            counts[k] += 1;
            for (s, z) in sums[k].iter_mut().zip(&h.levels) {
                *s += &cast::<T, f64>(z);
            }
            if (0..h.levels.len()).all(|l| self.nearest_at(l, &h.levels[l]) == k) {
                consistent += 1;
            }
        }
        let mut rms = [f64::INFINITY; 2];
        let mut max = [f64::INFINITY; 2];
        for k in 0..2 {
            if counts[k] == 0 {
                continue;
            }
            let (mut ss, mut n, mut mx) = (0.0, 0usize, 0.0f64);
            for (s, m) in sums[k].iter().zip(&self.modes[k].levels) {
                for (&a, &b) in s.iter().zip(m.iter()) {
                    let e = a / counts[k] as f64 - b;
                    ss += e * e;
                    n += 1;
                    mx = mx.max(e.abs());
                }
            }
            rms[k] = (ss / n as f64).sqrt();
            max[k] = mx;
        }
        ModeRecovery {
            counts,
            rms_mean_error: rms,
            max_mean_error: max,
            level_consistency: consistent as f64 / samples.len().max(1) as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels() -> Vec<LevelConfig> {
        vec![LevelConfig::new(8, 4, 1), LevelConfig::new(4, 4, 1), LevelConfig::new(2, 4, 1)]
    }

    #[test]
    fn noisy_samples_recover_their_own_modes() {
        let toy = TwoModeToy::new(&levels(), 0.05, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (labels, samples): (Vec<usize>, Vec<_>) = (0..400).map(|_| toy.sample(&mut rng)).unzip();
        assert!(samples.iter().zip(&labels).all(|(h, &k)| toy.nearest_mode(h) == k));
        let r = toy.recovery(&samples);
        assert!(r.counts[0] > 150 && r.counts[1] > 150);
        assert!(r.rms_mean_error.iter().all(|&e| e < 0.01), "{r:?}");
        assert_eq!(r.level_consistency, 1.0);
    }

    #[test]
    fn a_collapsed_sampler_is_detected() {
        let toy = TwoModeToy::new(&levels(), 0.05, 1);
        let r = toy.recovery(&vec![toy.modes[0].clone(); 10]);
        assert_eq!(r.counts, [10, 0]);
        assert!(r.rms_mean_error[1].is_infinite());
    }
}
