//! Lloyd's k-means with k-means++ seeding and best-of-n restarts.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 300,
            tol: 1e-8,
            restarts: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point (ties to the lower index) and its squared distance.
fn assign(data: ArrayView2<'_, f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let mut best = (0usize, f64::INFINITY);
            for (c, mu) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(x, mu);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

/// Candidates tried per seed in greedy k-means++.
fn local_trials(k: usize) -> usize {
    2 + (k as f64).ln().floor() as usize
}

/// Greedy k-means++: each new seed is the best of a few `D^2`-weighted draws,
/// judged by the resulting potential.
fn plus_plus_seeds<R: Rng + ?Sized>(data: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(first))).collect();
    let trials = local_trials(k);
    for c in 1..k {
        let mut cumulative = Vec::with_capacity(n);
        let mut total = 0.0;
        for &w in &d2 {
            total += w;
            cumulative.push(total);
        }
        let candidates: Vec<usize> = (0..trials)
            .map(|_| {
                if total > 0.0 {
                    let r = rng.random::<f64>() * total;
                    cumulative.partition_point(|&acc| acc <= r).min(n - 1)
                } else {
                    rng.random_range(0..n)
                }
            })
            .collect();
        let (pick, next_d2) = candidates
            .iter()
            .map(|&cand| {
                let next: Vec<f64> = (0..n)
                    .map(|i| d2[i].min(sq_dist(data.row(i), data.row(cand))))
                    .collect();
                (cand, next)
            })
            .min_by(|a, b| a.1.iter().sum::<f64>().total_cmp(&b.1.iter().sum::<f64>()))
            .unwrap();
        centroids.row_mut(c).assign(&data.row(pick));
        d2 = next_d2;
    }
    centroids
}

/// One seeded run of Lloyd's algorithm.
pub fn kmeans_single<R: Rng + ?Sized>(
    data: ArrayView2<'_, f64>,
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<ClusteringResult> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} must be in [1, N = {n}]")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut centroids = plus_plus_seeds(data, k, rng);
    let mut history = Vec::new();
    let mut nearest = assign(data, &centroids);
    history.push(nearest.iter().map(|p| p.1).sum());

    for _ in 0..max_iter {
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in nearest.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &data.row(i));
            counts[c] += 1;
        }
        let mut next = centroids.clone();
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| nearest[a].1.total_cmp(&nearest[b].1).then(b.cmp(&a)))
                    .unwrap();
                taken[far] = true;
                next.row_mut(c).assign(&data.row(far));
            }
        }
        let shift = centroids
            .rows()
            .into_iter()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        nearest = assign(data, &centroids);
        history.push(nearest.iter().map(|p| p.1).sum());
        if shift < tol {
            break;
        }
    }

    Ok(ClusteringResult {
        assignment: nearest.iter().map(|p| p.0).collect(),
        inertia: *history.last().unwrap(),
        inertia_history: history,
        centroids,
    })
}

/// Best (lowest-inertia) of `cfg.restarts` seeded runs; earlier runs win ties.
pub fn kmeans(data: ArrayView2<'_, f64>, cfg: &KMeansConfig) -> Result<ClusteringResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<ClusteringResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let run = kmeans_single(data, cfg.k, cfg.max_iter, cfg.tol, &mut rng)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Column means, used as the single-cluster reference.
pub fn mean_point(data: ArrayView2<'_, f64>) -> Array1<f64> {
    data.mean_axis(Axis(0)).unwrap()
}
