//! Labeled/unlabeled partitions with few-shot class and label ratios.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureSet;
use crate::error::{Error, Result};

/// Upper bound on both ratios for a split to count as few-shot.
pub const FEW_SHOT_RATIO_LIMIT: f64 = 0.2;

/// Partition of a feature set into a labeled subset drawn from the known
/// classes and an unlabeled remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub sample_count: usize,
    pub class_count: usize,
    pub labeled_ids: Vec<usize>,
    pub unlabeled_ids: Vec<usize>,
    pub known_classes: Vec<usize>,
    pub unknown_classes: Vec<usize>,
    /// Requested fraction of classes that are known.
    pub c_l: f64,
    /// Requested fraction of known-class samples that are labeled.
    pub p_l: f64,
    pub seed: u64,
}

/// Number of known classes for a class ratio: the first `ceil(c_l * |C|)` ids.
pub fn known_class_count(class_count: usize, c_l: f64) -> usize {
    // The epsilon keeps products such as 0.05 * 100 from rounding up to 6.
    ((c_l * class_count as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Labeled samples taken from a known class of size `n`.
pub fn labeled_per_class(n: usize, p_l: f64) -> usize {
    ((p_l * n as f64).round() as usize).clamp(1, n.max(1))
}

pub fn generate_split(fs_: &FeatureSet, c_l: f64, p_l: f64, seed: u64) -> Result<DatasetSplit> {
    for (name, r) in [("c_l", c_l), ("p_l", p_l)] {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::InvalidConfig(format!("{name} = {r} is outside (0, 1]")));
        }
    }
    if !fs_.is_fully_labeled() {
        return Err(Error::DegenerateData(
            "splitting requires ground-truth labels for every sample".into(),
        ));
    }
    let by_class = fs_.ids_by_class();
    let n_known = known_class_count(fs_.class_count(), c_l);
    let known_classes: Vec<usize> = (0..n_known).collect();
    let unknown_classes: Vec<usize> = (n_known..fs_.class_count()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::new();
    for &k in &known_classes {
        let members = &by_class[k];
        if members.is_empty() {
            return Err(Error::DegenerateData(format!("known class {k} has no samples")));
        }
        let m = labeled_per_class(members.len(), p_l);
        let picked = rand::seq::index::sample(&mut rng, members.len(), m);
        labeled.extend(picked.into_iter().map(|i| members[i]));
    }
    labeled.sort_unstable();
    let labeled_set: BTreeSet<usize> = labeled.iter().copied().collect();
    let unlabeled_ids = (0..fs_.len()).filter(|i| !labeled_set.contains(i)).collect();

    Ok(DatasetSplit {
        sample_count: fs_.len(),
        class_count: fs_.class_count(),
        labeled_ids: labeled,
        unlabeled_ids,
        known_classes,
        unknown_classes,
        c_l,
        p_l,
        seed,
    })
}

impl DatasetSplit {
    /// Realised `|C_kwn| / |C|`.
    pub fn class_ratio(&self) -> f64 {
        self.known_classes.len() as f64 / self.class_count.max(1) as f64
    }

    /// Realised `|X_l| / |X_kwn|`, which needs ground truth for the unlabeled part.
    pub fn label_ratio(&self, truth: &FeatureSet) -> f64 {
        let known: BTreeSet<usize> = self.known_classes.iter().copied().collect();
        let kwn = truth
            .labels()
            .iter()
            .filter(|l| l.is_some_and(|l| known.contains(&l)))
            .count();
        self.labeled_ids.len() as f64 / kwn.max(1) as f64
    }

    /// Whether the realised ratios satisfy the few-shot limits.
    pub fn is_few_shot(&self, truth: &FeatureSet) -> bool {
        self.class_ratio() <= FEW_SHOT_RATIO_LIMIT + 1e-12
            && self.label_ratio(truth) <= FEW_SHOT_RATIO_LIMIT + 1e-12
    }

    pub fn is_known(&self, class: usize) -> bool {
        self.known_classes.binary_search(&class).is_ok()
    }

    pub fn is_labeled(&self, id: usize) -> bool {
        self.labeled_ids.binary_search(&id).is_ok()
    }

    /// Checks the structural invariants against the feature set it was made for.
    pub fn validate(&self, fs_: &FeatureSet) -> Result<()> {
        if self.sample_count != fs_.len() {
            return Err(Error::dims(self.sample_count, fs_.len(), "split sample count"));
        }
        if self.class_count != fs_.class_count() {
            return Err(Error::dims(self.class_count, fs_.class_count(), "split class count"));
        }
        let mut seen = vec![false; fs_.len()];
        for &id in self.labeled_ids.iter().chain(&self.unlabeled_ids) {
            if id >= fs_.len() {
                return Err(Error::UnknownId(id));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::Format(format!("sample {id} appears twice in split")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("split does not cover every sample".into()));
        }
        let classes: BTreeSet<usize> = self
            .known_classes
            .iter()
            .chain(&self.unknown_classes)
            .copied()
            .collect();
        if classes.len() != self.known_classes.len() + self.unknown_classes.len()
            || classes != (0..self.class_count).collect()
        {
            return Err(Error::Format(
                "known and unknown classes must partition all classes".into(),
            ));
        }
        for &id in &self.labeled_ids {
            match fs_.label(id) {
                Some(l) if self.is_known(l) => {}
                _ => {
                    return Err(Error::Format(format!(
                        "labeled sample {id} does not carry a known-class label"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Number of known classes that have at least one labeled sample.
    pub fn labeled_class_count(&self, fs_: &FeatureSet) -> usize {
        self.labeled_ids
            .iter()
            .filter_map(|&id| fs_.label(id))
            .collect::<BTreeSet<_>>()
            .len()
    }
}
