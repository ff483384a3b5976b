//! Margin triplet losses: plain, known-class and knowledge transfer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub value: f64,
    pub grad_anchor: Array1<f64>,
    pub grad_positive: Array1<f64>,
    pub grad_negative: Array1<f64>,
}

/// `max(|a - p|^2 - |a - n|^2 + margin, 0)` with its gradients.
pub fn triplet_loss(
    anchor: ArrayView1<'_, f64>,
    positive: ArrayView1<'_, f64>,
    negative: ArrayView1<'_, f64>,
    margin: f64,
) -> Result<Triplet> {
    let d = anchor.len();
    if positive.len() != d || negative.len() != d {
        return Err(Error::dims(d, positive.len().max(negative.len()), "triplet members"));
    }
    let ap = &anchor - &positive;
    let an = &anchor - &negative;
    let arg = ap.dot(&ap) - an.dot(&an) + margin;
    if arg <= 0.0 {
        let z = Array1::zeros(d);
        return Ok(Triplet {
            value: 0.0,
            grad_anchor: z.clone(),
            grad_positive: z.clone(),
            grad_negative: z,
        });
    }
    Ok(Triplet {
        value: arg,
        grad_anchor: (&negative - &positive) * 2.0,
        grad_positive: &ap * -2.0,
        grad_negative: &an * 2.0,
    })
}

/// Result of a sampled triplet batch; `triplets` records `(anchor,
/// positive, negative)` row indices in evaluation order.
#[derive(Debug, Clone)]
pub struct SampledTripletLoss {
    pub value: f64,
    pub grad: Array2<f64>,
    pub triplets: Vec<(usize, usize, usize)>,
    pub skipped: usize,
}

/// Known-class triplet loss over a labeled batch.
///
/// For every anchor in row order a positive is drawn uniformly from the other
/// rows of its class, then a negative uniformly from rows of other classes.
/// Anchors lacking either are skipped without consuming randomness.
pub fn known_triplet_loss<R: Rng + ?Sized>(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    margin: f64,
    rng: &mut R,
) -> Result<SampledTripletLoss> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(Error::dims(n, labels.len(), "labels"));
    }
    let mut grad = Array2::zeros(embeddings.raw_dim());
    let mut triplets = Vec::new();
    let mut total = 0.0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let p = positives[rng.random_range(0..positives.len())];
        let q = negatives[rng.random_range(0..negatives.len())];
        let t = triplet_loss(embeddings.row(i), embeddings.row(p), embeddings.row(q), margin)?;
        total += t.value;
        grad.row_mut(i).scaled_add(1.0, &t.grad_anchor);
        grad.row_mut(p).scaled_add(1.0, &t.grad_positive);
        grad.row_mut(q).scaled_add(1.0, &t.grad_negative);
        triplets.push((i, p, q));
    }
    if triplets.is_empty() {
        return Err(Error::DegenerateBatch(
            "no anchor has both a same-class positive and a different-class negative".into(),
        ));
    }
    let count = triplets.len() as f64;
    grad /= count;
    Ok(SampledTripletLoss {
        value: total / count,
        grad,
        skipped: n - triplets.len(),
        triplets,
    })
}

#[derive(Debug, Clone)]
pub struct TransferLoss {
    pub value: f64,
    pub grad_anchors: Array2<f64>,
    pub grad_partners: Array2<f64>,
    /// Negative row (into `anchors`) drawn for each anchor.
    pub negatives: Vec<usize>,
}

/// Knowledge transfer loss: each unlabeled anchor is pulled to its
/// affinity-retrieved partner and pushed from a uniformly drawn other anchor.
pub fn knowledge_transfer_loss<R: Rng + ?Sized>(
    anchors: ArrayView2<'_, f64>,
    partners: ArrayView2<'_, f64>,
    margin: f64,
    rng: &mut R,
) -> Result<TransferLoss> {
    let b = anchors.nrows();
    if partners.dim() != anchors.dim() {
        return Err(Error::dims(anchors.len(), partners.len(), "affinity partners"));
    }
    if b < 2 {
        return Err(Error::DegenerateBatch(format!(
            "knowledge transfer needs at least 2 unlabeled anchors, got {b}"
        )));
    }
    let mut grad_anchors = Array2::zeros(anchors.raw_dim());
    let mut grad_partners = Array2::zeros(partners.raw_dim());
    let mut negatives = Vec::with_capacity(b);
    let mut total = 0.0;
    for i in 0..b {
        let mut j = rng.random_range(0..b - 1);
        if j >= i {
            j += 1;
        }
        let t = triplet_loss(anchors.row(i), partners.row(i), anchors.row(j), margin)?;
        total += t.value;
        grad_anchors.row_mut(i).scaled_add(1.0, &t.grad_anchor);
        grad_partners.row_mut(i).scaled_add(1.0, &t.grad_positive);
        grad_anchors.row_mut(j).scaled_add(1.0, &t.grad_negative);
        negatives.push(j);
    }
    let scale = 1.0 / b as f64;
    Ok(TransferLoss {
        value: total * scale,
        grad_anchors: grad_anchors * scale,
        grad_partners: grad_partners * scale,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_distances_leave_the_margin() {
        let t = triplet_loss(array![0.0, 0.0].view(), array![1.0, 0.0].view(), array![1.0, 0.0].view(), 0.3)
            .unwrap();
        assert!((t.value - 0.3).abs() < 1e-15);
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let t = triplet_loss(array![0.0, 0.0].view(), array![0.0, 0.0].view(), array![1.0, 0.0].view(), 0.3)
            .unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.grad_anchor.iter().chain(&t.grad_positive).chain(&t.grad_negative).all(|g| *g == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(triplet_loss(array![0.0, 0.0].view(), array![0.0].view(), array![1.0, 0.0].view(), 0.3).is_err());
    }

    #[test]
    fn separated_classes_give_zero_known_loss() {
        // Two classes at squared distance 4, members of a class coincide.
        let e = array![[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = known_triplet_loss(e.view(), &[0, 0, 1, 1], 0.3, &mut rng).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.triplets.len(), 4);
    }

    #[test]
    fn single_class_batch_is_degenerate() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            known_triplet_loss(e.view(), &[2, 2], 0.3, &mut rng),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn singleton_class_anchor_is_skipped() {
        let e = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = known_triplet_loss(e.view(), &[0, 1, 1], 0.3, &mut rng).unwrap();
        assert_eq!(out.skipped, 1);
        assert!(out.triplets.iter().all(|t| t.0 != 0));
    }

    #[test]
    fn transfer_with_duplicate_partner_and_far_negative_is_zero() {
        let a = array![[1.0, 0.0], [-1.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = knowledge_transfer_loss(a.view(), a.view(), 0.3, &mut rng).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.negatives, vec![1, 0]);
    }

    #[test]
    fn transfer_needs_two_anchors() {
        let a = array![[1.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            knowledge_transfer_loss(a.view(), a.view(), 0.3, &mut rng),
            Err(Error::DegenerateBatch(_))
        ));
    }
}
