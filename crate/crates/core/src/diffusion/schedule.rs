//! Noise levels, preconditioning and training-time noise sampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseScheduleEDM {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub sigma_data: f64,
    pub steps: usize,
}

impl Default for NoiseScheduleEDM {
    fn default() -> Self {
        Self { sigma_min: 0.002, sigma_max: 80.0, rho: 7.0, sigma_data: 1.0, steps: 32 }
    }
}

impl NoiseScheduleEDM {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::config("sigma_min", "need 0 < sigma_min < sigma_max < inf"));
        }
        if !(self.rho > 0.0) {
            return Err(Error::config("rho", "must be positive"));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::config("sigma_data", "must be positive"));
        }
        if self.steps < 2 {
            return Err(Error::config("steps", "at least 2 noise levels are required"));
        }
        Ok(())
    }

    /// Noise levels from `sigma_max` down to `sigma_min`, evenly spaced in
    /// `sigma^(1/rho)`. Endpoints are exact.
    pub fn karras_sigmas(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.steps;
        let (hi, lo) = (self.sigma_max.powf(1.0 / self.rho), self.sigma_min.powf(1.0 / self.rho));
        let mut out: Vec<f64> =
            (0..n).map(|i| (hi + i as f64 / (n - 1) as f64 * (lo - hi)).powf(self.rho)).collect();
        out[0] = self.sigma_max;
        out[n - 1] = self.sigma_min;
        Ok(out)
    }

    pub fn precondition(&self, sigma: f64) -> Preconditioning {
        Preconditioning::new(sigma, self.sigma_data)
    }
}

/// Input, skip and output scalings of the denoiser at one noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Preconditioning {
    pub fn new(sigma: f64, sigma_data: f64) -> Self {
        let (s2, d2) = (sigma * sigma, sigma_data * sigma_data);
        let norm = (s2 + d2).sqrt();
        Self { c_skip: d2 / (s2 + d2), c_out: sigma * sigma_data / norm, c_in: 1.0 / norm, c_noise: sigma.ln() / 4.0 }
    }
}

/// Per-sample weight that equalizes the loss scale across noise levels.
pub fn loss_weight(sigma: f64, sigma_data: f64) -> f64 {
    (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data).powi(2)
}

/// `z + sigma * eps` with standard normal `eps`.
pub fn add_noise<T: Scalar, R: Rng + ?Sized>(z: &Mat<T>, sigma: f64, rng: &mut R) -> Mat<T> {
    let mut out = z.clone();
    for v in out.iter_mut() {
        let e: f64 = StandardNormal.sample(rng);
        *v += T::of(sigma * e);
    }
    out
}

/// Log-normal distribution of training noise levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaSampler {
    pub log_mean: f64,
    pub log_std: f64,
}

impl Default for SigmaSampler {
    fn default() -> Self {
        Self { log_mean: -1.2, log_std: 1.2 }
    }
}

impl SigmaSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n: f64 = StandardNormal.sample(rng);
        (self.log_mean + self.log_std * n).exp()
    }
}
