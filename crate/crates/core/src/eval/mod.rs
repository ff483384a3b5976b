//! Open-set clustering evaluation: k-means with `|C|` clusters, Hungarian
//! matching to ground truth, ALL/OLD/NEW accuracy and the
//! Calinski-Harabasz index.

mod hungarian;
mod kmeans;
mod metrics;

pub use hungarian::{hungarian, Assignment};
pub use kmeans::{kmeans, kmeans_single, mean_point, ClusteringResult, KMeansConfig};
pub use metrics::{ch_index, cluster_accuracy, Accuracy, Metrics};

use ndarray::{ArrayView2, Axis};

use crate::data::{DatasetSplit, FeatureSet};
use crate::error::{Error, Result};

/// Which samples are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalSet {
    /// The unlabeled pool only.
    #[default]
    Unlabeled,
    /// Every training sample.
    All,
}

impl EvalSet {
    pub fn ids(self, split: &DatasetSplit) -> Vec<usize> {
        match self {
            EvalSet::Unlabeled => split.unlabeled_ids.clone(),
            EvalSet::All => (0..split.sample_count).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub set: EvalSet,
    /// Cluster count; `None` uses the class count.
    pub k: Option<usize>,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            set: EvalSet::Unlabeled,
            k: None,
            restarts: 10,
            seed: 0,
        }
    }
}

/// Clusters `points` (one row per evaluated id, aligned with `ids`) and scores
/// the result against ground truth.
pub fn evaluate_points(
    points: ArrayView2<'_, f64>,
    ids: &[usize],
    truth: &FeatureSet,
    split: &DatasetSplit,
    opts: &EvalOptions,
) -> Result<(Metrics, ClusteringResult)> {
    if points.nrows() != ids.len() {
        return Err(Error::dims(ids.len(), points.nrows(), "evaluated points"));
    }
    let labels = ids
        .iter()
        .map(|&i| {
            truth
                .label(i)
                .ok_or_else(|| Error::DegenerateData(format!("sample {i} has no ground truth")))
        })
        .collect::<Result<Vec<_>>>()?;
    let class_count = truth.class_count();
    let k = opts.k.unwrap_or(class_count);
    let mut km = KMeansConfig::new(k, opts.seed);
    km.restarts = opts.restarts;
    let clustering = kmeans(points, &km)?;
    let acc = cluster_accuracy(
        &clustering.assignment,
        &labels,
        |c| split.is_known(c),
        class_count,
        k,
        opts.k.is_some_and(|k| k != class_count),
    )?;
    let ch = match ch_index(points, &clustering.assignment) {
        Ok(v) => Some(v),
        Err(Error::InfiniteSeparation) => None,
        Err(e) => return Err(e),
    };
    Ok((
        Metrics {
            acc_all: acc.all,
            acc_old: acc.old,
            acc_new: acc.new,
            ch_index: ch,
            epoch: None,
            mapping: acc.mapping,
        },
        clustering,
    ))
}

/// Evaluates raw input features, the baseline trained embeddings are
/// compared against.
pub fn evaluate_features(
    truth: &FeatureSet,
    split: &DatasetSplit,
    opts: &EvalOptions,
) -> Result<Metrics> {
    let ids = opts.set.ids(split);
    let points = truth.features().select(Axis(0), &ids);
    Ok(evaluate_points(points.view(), &ids, truth, split, opts)?.0)
}
