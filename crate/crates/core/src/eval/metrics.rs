//! Hungarian-matched clustering accuracy and the Calinski-Harabasz index.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc_all: f64,
    /// `None` when no evaluated sample belongs to a known class.
    pub acc_old: Option<f64>,
    /// `None` when no evaluated sample belongs to an unknown class.
    pub acc_new: Option<f64>,
    /// `None` when the within-cluster dispersion vanishes.
    pub ch_index: Option<f64>,
    pub epoch: Option<usize>,
    /// `mapping[cluster]` is the class the cluster is matched to.
    pub mapping: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub all: f64,
    pub old: Option<f64>,
    pub new: Option<f64>,
    pub mapping: Vec<usize>,
}

/// Accuracy under the single cluster-to-class matching that maximises the
/// number of correctly assigned samples, split into known/unknown classes.
///
/// When `cluster_count != class_count` the contingency matrix is padded with
/// zeros to a square; this requires `allow_padding`.
pub fn cluster_accuracy(
    assignment: &[usize],
    truth: &[usize],
    is_known: impl Fn(usize) -> bool,
    class_count: usize,
    cluster_count: usize,
    allow_padding: bool,
) -> Result<Accuracy> {
    if assignment.len() != truth.len() {
        return Err(Error::dims(truth.len(), assignment.len(), "cluster assignment"));
    }
    if assignment.is_empty() {
        return Err(Error::DegenerateData("no samples to evaluate".into()));
    }
    if cluster_count != class_count && !allow_padding {
        return Err(Error::dims(class_count, cluster_count, "cluster count vs class count"));
    }
    if let Some(&c) = assignment.iter().find(|&&c| c >= cluster_count) {
        return Err(Error::Format(format!("cluster id {c} >= {cluster_count}")));
    }
    if let Some(&t) = truth.iter().find(|&&t| t >= class_count) {
        return Err(Error::Format(format!("class id {t} >= {class_count}")));
    }
    let k = cluster_count.max(class_count);
    let mut counts = Array2::<f64>::zeros((k, k));
    for (&c, &t) in assignment.iter().zip(truth) {
        counts[[c, t]] += 1.0;
    }
    let max = counts.iter().copied().fold(0.0, f64::max);
    let cost = counts.mapv(|v| max - v);
    let matching = hungarian(cost.view())?;
    let mapping = matching.row_to_col;

    let (mut hit, mut old_hit, mut old_n, mut new_hit, mut new_n) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (&c, &t) in assignment.iter().zip(truth) {
        let ok = mapping[c] == t;
        hit += usize::from(ok);
        if is_known(t) {
            old_n += 1;
            old_hit += usize::from(ok);
        } else {
            new_n += 1;
            new_hit += usize::from(ok);
        }
    }
    let frac = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
    Ok(Accuracy {
        all: hit as f64 / assignment.len() as f64,
        old: frac(old_hit, old_n),
        new: frac(new_hit, new_n),
        mapping: mapping[..cluster_count].to_vec(),
    })
}

/// `[tr(B) / (k - 1)] / [tr(W) / (N - k)]` over the non-empty clusters.
pub fn ch_index(data: ArrayView2<'_, f64>, assignment: &[usize]) -> Result<f64> {
    let n = data.nrows();
    if assignment.len() != n {
        return Err(Error::dims(n, assignment.len(), "cluster assignment"));
    }
    let k_max = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k_max];
    let mut sums = Array2::<f64>::zeros((k_max, data.ncols()));
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        sums.row_mut(c).scaled_add(1.0, &data.row(i));
    }
    let k = counts.iter().filter(|&&c| c > 0).count();
    if k < 2 || n <= k {
        return Err(Error::DegenerateData(format!(
            "Calinski-Harabasz needs 2 <= k < N, got k = {k}, N = {n}"
        )));
    }
    let mean: Array1<f64> = sums.sum_axis(ndarray::Axis(0)) / n as f64;
    let mut between = 0.0;
    let mut centroids = sums;
    for (c, mut row) in centroids.rows_mut().into_iter().enumerate() {
        if counts[c] == 0 {
            continue;
        }
        row /= counts[c] as f64;
        between += counts[c] as f64 * row.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let within: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            data.row(i)
                .iter()
                .zip(centroids.row(c))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    if within == 0.0 {
        return Err(Error::InfiniteSeparation);
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}
