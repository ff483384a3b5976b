//! Temperature-scaled contrastive objectives on unit embeddings.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    pub value: f64,
    pub grad: Array2<f64>,
    /// Anchors skipped for lacking positives or non-positives.
    pub skipped: usize,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// Supervised contrastive loss over labeled rows.
///
/// For an anchor `i` with positives `P` (other rows sharing its label) the
/// term is `-(1/|P|) Σ_p log(exp(v_i·v_p/τ) / Σ_n exp(v_i·v_n/τ))`. The
/// denominator runs over rows outside `P` and other than `i`, so terms are
/// not bounded above by zero; with `include_positives` it runs over every row
/// other than `i` instead. Unlabeled rows never anchor but do appear in
/// denominators. The result is the mean over non-skipped anchors.
pub fn affinity_supervised_loss(
    embeddings: ArrayView2<'_, f64>,
    labels: &[Option<usize>],
    tau: f64,
    include_positives: bool,
) -> Result<ContrastiveLoss> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(Error::dims(n, labels.len(), "labels"));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature {tau} must be positive")));
    }
    let sims = embeddings.dot(&embeddings.t());
    let mut grad = Array2::zeros(embeddings.raw_dim());
    let mut total = 0.0;
    let mut anchors = 0usize;
    let mut skipped = 0usize;
    for i in 0..n {
        let Some(y) = labels[i] else { continue };
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == Some(y)).collect();
        let denom: Vec<usize> = (0..n)
            .filter(|&j| j != i && (include_positives || labels[j] != Some(y)))
            .collect();
        if positives.is_empty() || denom.iter().all(|j| positives.contains(j)) {
            skipped += 1;
            continue;
        }
        let logits: Vec<f64> = denom.iter().map(|&j| sims[[i, j]] / tau).collect();
        let lse = log_sum_exp(&logits);
        let w = 1.0 / positives.len() as f64;
        let mean_pos = positives.iter().map(|&p| sims[[i, p]]).sum::<f64>() * w / tau;
        total += lse - mean_pos;
        anchors += 1;

        let vi = embeddings.row(i).to_owned();
        let mut gi: Array1<f64> = Array1::zeros(vi.len());
        for &p in &positives {
            gi.scaled_add(-w / tau, &embeddings.row(p));
            grad.row_mut(p).scaled_add(-w / tau, &vi);
        }
        for (&j, s) in denom.iter().zip(softmax(&logits)) {
            gi.scaled_add(s / tau, &embeddings.row(j));
            grad.row_mut(j).scaled_add(s / tau, &vi);
        }
        grad.row_mut(i).scaled_add(1.0, &gi);
    }
    if anchors == 0 {
        return Err(Error::DegenerateBatch(
            "no labeled anchor has both a positive and a non-positive".into(),
        ));
    }
    let scale = 1.0 / anchors as f64;
    Ok(ContrastiveLoss {
        value: total * scale,
        grad: grad * scale,
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct ViewContrastiveLoss {
    pub value: f64,
    pub grad: Array2<f64>,
    pub grad_views: Array2<f64>,
}

/// Unsupervised contrastive loss: `-(1/|b|) Σ_i log(exp(v_i·v_i'/τ) /
/// Σ_{j≠i} exp(v_i·v_j/τ))`, where `v_i'` is the augmented view of row `i`.
pub fn unsupervised_contrastive_loss(
    embeddings: ArrayView2<'_, f64>,
    views: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<ViewContrastiveLoss> {
    let b = embeddings.nrows();
    if views.dim() != embeddings.dim() {
        return Err(Error::dims(embeddings.len(), views.len(), "augmented views"));
    }
    if b < 2 {
        return Err(Error::DegenerateBatch(format!(
            "contrastive loss needs at least 2 members, got {b}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature {tau} must be positive")));
    }
    let sims = embeddings.dot(&embeddings.t());
    let mut grad = Array2::zeros(embeddings.raw_dim());
    let mut grad_views = Array2::zeros(views.raw_dim());
    let mut total = 0.0;
    for i in 0..b {
        let vi = embeddings.row(i).to_owned();
        let pos = vi.dot(&views.row(i)) / tau;
        let others: Vec<usize> = (0..b).filter(|&j| j != i).collect();
        let logits: Vec<f64> = others.iter().map(|&j| sims[[i, j]] / tau).collect();
        total += log_sum_exp(&logits) - pos;

        let mut gi = views.row(i).to_owned() * (-1.0 / tau);
        grad_views.row_mut(i).scaled_add(-1.0 / tau, &vi);
        for (&j, s) in others.iter().zip(softmax(&logits)) {
            gi.scaled_add(s / tau, &embeddings.row(j));
            grad.row_mut(j).scaled_add(s / tau, &vi);
        }
        grad.row_mut(i).scaled_add(1.0, &gi);
    }
    let scale = 1.0 / b as f64;
    Ok(ViewContrastiveLoss {
        value: total * scale,
        grad: grad * scale,
        grad_views: grad_views * scale,
    })
}
