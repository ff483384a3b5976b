//! Nearest-neighbour affinity retrieval over an epoch snapshot of embeddings.
//!
//! Labeled anchors retrieve from the unlabeled pool and hand their label to
//! the retrieved sample; unlabeled anchors retrieve from every other sample.
//! Ties go to the lowest sample id.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{DatasetSplit, FeatureSet};
use crate::encoder::{encode_batch, EncoderParams};
use crate::error::{Error, Result};

const BLOCK_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PseudoLabel {
    pub label: usize,
    /// Labeled anchor whose retrieval produced this label.
    pub anchor: usize,
    pub cosine: f64,
}

/// Immutable per-epoch retrieval table.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityIndex {
    embeddings: Array2<f64>,
    nn_of: Vec<usize>,
    nn_cosine: Vec<f64>,
    pseudo_labels: BTreeMap<usize, PseudoLabel>,
    true_labels: BTreeMap<usize, usize>,
}

/// Encodes every sample with `params` and builds the index from the result.
pub fn build_affinity_index(
    features: &FeatureSet,
    split: &DatasetSplit,
    params: &EncoderParams,
) -> Result<AffinityIndex> {
    if !params.all_finite() {
        return Err(Error::NonFinite("encoder parameters".into()));
    }
    let embeddings = encode_batch(features.features(), params)?;
    let labels: Vec<Option<usize>> = (0..features.len())
        .map(|i| if split.is_labeled(i) { features.label(i) } else { None })
        .collect();
    AffinityIndex::from_embeddings(embeddings, split, &labels)
}

impl AffinityIndex {
    /// `labels` must hold the label of every labeled sample in `split`.
    pub fn from_embeddings(
        embeddings: Array2<f64>,
        split: &DatasetSplit,
        labels: &[Option<usize>],
    ) -> Result<Self> {
        let n = embeddings.nrows();
        if split.sample_count != n || labels.len() != n {
            return Err(Error::dims(split.sample_count, n, "affinity snapshot"));
        }
        if split.labeled_ids.is_empty() || split.unlabeled_ids.is_empty() {
            return Err(Error::DegenerateData(
                "affinity retrieval needs non-empty labeled and unlabeled pools".into(),
            ));
        }
        let mut is_labeled = vec![false; n];
        let mut true_labels = BTreeMap::new();
        for &id in &split.labeled_ids {
            is_labeled[id] = true;
            let l = labels[id]
                .ok_or_else(|| Error::DegenerateData(format!("labeled sample {id} has no label")))?;
            true_labels.insert(id, l);
        }
        let norms: Array1<f64> = embeddings.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        if norms.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::DegenerateData("zero-norm or non-finite embedding".into()));
        }

        let starts: Vec<usize> = (0..n).step_by(BLOCK_ROWS).collect();
        let blocks: Vec<Vec<(usize, f64)>> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + BLOCK_ROWS).min(n);
                let sims = embeddings.slice(s![start..end, ..]).dot(&embeddings.t());
                (start..end)
                    .map(|i| {
                        let row = sims.row(i - start);
                        let mut best = (usize::MAX, f64::NEG_INFINITY);
                        for j in 0..n {
                            if j == i || (is_labeled[i] && is_labeled[j]) {
                                continue;
                            }
                            let c = row[j] / (norms[i] * norms[j]);
                            if c > best.1 {
                                best = (j, c);
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        let (nn_of, nn_cosine): (Vec<usize>, Vec<f64>) = blocks.into_iter().flatten().unzip();
        if nn_of.contains(&usize::MAX) {
            return Err(Error::DegenerateData("an anchor has no retrieval candidate".into()));
        }

        let mut pseudo_labels: BTreeMap<usize, PseudoLabel> = BTreeMap::new();
        for (&anchor, &label) in &true_labels {
            let cand = PseudoLabel {
                label,
                anchor,
                cosine: nn_cosine[anchor],
            };
            pseudo_labels
                .entry(nn_of[anchor])
                .and_modify(|cur| {
                    if cand.cosine > cur.cosine {
                        *cur = cand;
                    }
                })
                .or_insert(cand);
        }

        Ok(Self {
            embeddings,
            nn_of,
            nn_cosine,
            pseudo_labels,
            true_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.nn_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nn_of.is_empty()
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn nn_of(&self) -> &[usize] {
        &self.nn_of
    }

    pub fn nn_cosine(&self) -> &[f64] {
        &self.nn_cosine
    }

    pub fn pseudo_labels(&self) -> &BTreeMap<usize, PseudoLabel> {
        &self.pseudo_labels
    }

    /// Label available for a sample: its true label if labeled, else its
    /// pseudo-label if one was assigned.
    pub fn label_of(&self, id: usize) -> Option<usize> {
        self.true_labels
            .get(&id)
            .copied()
            .or_else(|| self.pseudo_labels.get(&id).map(|p| p.label))
    }

    pub fn retrieve(&self, id: usize) -> Result<(usize, ArrayView1<'_, f64>)> {
        let nn = *self.nn_of.get(id).ok_or(Error::UnknownId(id))?;
        Ok((nn, self.embeddings.row(nn)))
    }

    /// Labeled samples together with pseudo-labeled retrievals, by id.
    pub fn augmented_labeled_set(&self) -> Vec<(usize, usize)> {
        let mut out: BTreeMap<usize, usize> = self.true_labels.clone();
        for (&id, p) in &self.pseudo_labels {
            out.entry(id).or_insert(p.label);
        }
        out.into_iter().collect()
    }

    /// CSV dump of `id,nn_id,cosine,pseudo_label`.
    pub fn write_debug_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "id,nn_id,cosine,pseudo_label")?;
        for (id, (&nn, &c)) in self.nn_of.iter().zip(&self.nn_cosine).enumerate() {
            match self.pseudo_labels.get(&id) {
                Some(p) => writeln!(w, "{id},{nn},{c},{}", p.label)?,
                None => writeln!(w, "{id},{nn},{c},")?,
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AffinityIndex::augmented_labeled_set`].
pub fn augmented_labeled_set(index: &AffinityIndex) -> Vec<(usize, usize)> {
    index.augmented_labeled_set()
}

/// Free-function form of [`AffinityIndex::retrieve`].
pub fn retrieve(index: &AffinityIndex, id: usize) -> Result<(usize, ArrayView1<'_, f64>)> {
    index.retrieve(id)
}
