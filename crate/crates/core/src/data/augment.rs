//! Feature-space augmentation producing a second view of a sample.
//!
//! A view is `mask * (s * v + noise)` with a single scale `s` drawn uniformly
//! from the jitter range, Gaussian noise per coordinate and a Bernoulli keep
//! mask per coordinate.

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    noise_sigma: f64,
    dropout_prob: f64,
    scale_jitter: (f64, f64),
}

impl AugmentConfig {
    pub fn new(noise_sigma: f64, dropout_prob: f64, scale_jitter: (f64, f64)) -> Result<Self> {
        let (lo, hi) = scale_jitter;
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sigma = {noise_sigma}")));
        }
        if !(0.0..1.0).contains(&dropout_prob) {
            return Err(Error::InvalidConfig(format!(
                "dropout_prob = {dropout_prob} is outside [0, 1)"
            )));
        }
        if !(lo <= 1.0 && 1.0 <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale_jitter [{lo}, {hi}] must contain 1"
            )));
        }
        Ok(Self {
            noise_sigma,
            dropout_prob,
            scale_jitter,
        })
    }

    pub fn identity() -> Self {
        Self {
            noise_sigma: 0.0,
            dropout_prob: 0.0,
            scale_jitter: (1.0, 1.0),
        }
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn dropout_prob(&self) -> f64 {
        self.dropout_prob
    }

    pub fn scale_jitter(&self) -> (f64, f64) {
        self.scale_jitter
    }

    /// Converts a noise level expressed in feature-scale units into an
    /// absolute standard deviation.
    pub fn scaled_to(mut self, coordinate_scale: f64) -> Self {
        self.noise_sigma *= coordinate_scale;
        self
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            dropout_prob: 0.1,
            scale_jitter: (0.9, 1.1),
        }
    }
}

pub fn augment_view<R: Rng + ?Sized>(
    v: ArrayView1<'_, f64>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Array1<f64> {
    let (lo, hi) = cfg.scale_jitter;
    let s = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let keep = 1.0 - cfg.dropout_prob;
    v.iter()
        .map(|&x| {
            let mut y = if s == 1.0 { x } else { s * x };
            if cfg.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                y += cfg.noise_sigma * z;
            }
            if cfg.dropout_prob > 0.0 && !rng.random_bool(keep) {
                y = 0.0;
            }
            y
        })
        .collect()
}
