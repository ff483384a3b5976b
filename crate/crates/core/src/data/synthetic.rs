//! Gaussian-mixture feature sets for desk-scale experiments.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FeatureSet;
use crate::error::{Error, Result};

/// Isotropic Gaussian clusters with unit within-class standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub dimension: usize,
    /// Distance between every pair of centroids, in within-class std units.
    pub class_separation: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InvalidConfig("class_count must be at least 2".into()));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::InvalidConfig("class_separation must be positive".into()));
        }
        if self.dimension < 2 {
            return Err(Error::InvalidConfig("dimension must be at least 2".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("samples_per_class must be positive".into()));
        }
        if self.class_count > self.dimension {
            return Err(Error::InvalidConfig(format!(
                "dimension {} is too small to place {} equidistant centroids",
                self.dimension, self.class_count
            )));
        }
        Ok(())
    }
}

/// Centroids are the vertices of a regular simplex with edge
/// `class_separation`, embedded along a random orthonormal frame. Samples are
/// stored class-major.
pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<FeatureSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (k, d) = (cfg.class_count, cfg.dimension);

    // Gram-Schmidt on Gaussian vectors gives a random orthonormal frame.
    let mut frame: Vec<Array1<f64>> = Vec::with_capacity(k);
    while frame.len() < k {
        let mut q: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &frame {
            let proj = q.dot(b);
            q.scaled_add(-proj, b);
        }
        let norm = q.dot(&q).sqrt();
        if norm > 1e-6 {
            frame.push(q / norm);
        }
    }
    let mean = frame.iter().fold(Array1::<f64>::zeros(d), |acc, q| acc + q) / k as f64;
    let radius = cfg.class_separation / std::f64::consts::SQRT_2;
    let centroids: Vec<Array1<f64>> = frame.iter().map(|q| (q - &mean) * radius).collect();

    let n = k * cfg.samples_per_class;
    let mut x = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (c, centroid) in centroids.iter().enumerate() {
        for s in 0..cfg.samples_per_class {
            let mut row = x.row_mut(c * cfg.samples_per_class + s);
            for (out, mu) in row.iter_mut().zip(centroid) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *out = mu + z;
            }
            labels.push(Some(c));
        }
    }
    FeatureSet::new(x, labels, k)
}
