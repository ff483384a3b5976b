use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Cosine similarity and its gradients with respect to both arguments.
pub fn cosine_with_grad(
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let nx = x.dot(&x).sqrt();
    let ny = y.dot(&y).sqrt();
    if !(nx > 0.0 && ny > 0.0) {
        return Err(Error::DegenerateData("cosine of a zero-norm vector".into()));
    }
    let c = x.dot(&y) / (nx * ny);
    let gx = &y / (nx * ny) - &x * (c / (nx * nx));
    let gy = &x / (nx * ny) - &y * (c / (ny * ny));
    Ok((c, gx, gy))
}

#[derive(Debug, Clone)]
pub struct AffinityLoss {
    pub value: f64,
    pub grad_anchors: Array2<f64>,
    pub grad_anchor_views: Array2<f64>,
    pub grad_partners: Array2<f64>,
    pub grad_partner_views: Array2<f64>,
}

/// Cross-view affinity loss: each anchor is pulled towards its partner's
/// augmented view and each partner towards the anchor's augmented view,
/// `(1/2b) Σ [(1 - cos(u, a')) + (1 - cos(u', a))]`.
pub fn affinity_loss(
    anchors: ArrayView2<'_, f64>,
    anchor_views: ArrayView2<'_, f64>,
    partners: ArrayView2<'_, f64>,
    partner_views: ArrayView2<'_, f64>,
) -> Result<AffinityLoss> {
    let dim = anchors.dim();
    for (name, m) in [
        ("anchor views", &anchor_views),
        ("partners", &partners),
        ("partner views", &partner_views),
    ] {
        if m.dim() != dim {
            return Err(Error::dims(anchors.len(), m.len(), name));
        }
    }
    let b = dim.0;
    if b == 0 {
        return Err(Error::DegenerateBatch("affinity loss over an empty batch".into()));
    }
    let mut out = AffinityLoss {
        value: 0.0,
        grad_anchors: Array2::zeros(dim),
        grad_anchor_views: Array2::zeros(dim),
        grad_partners: Array2::zeros(dim),
        grad_partner_views: Array2::zeros(dim),
    };
    let w = 1.0 / (2.0 * b as f64);
    for i in 0..b {
        let (c1, gu, gav) = cosine_with_grad(anchors.row(i), partner_views.row(i))?;
        let (c2, guv, ga) = cosine_with_grad(anchor_views.row(i), partners.row(i))?;
        out.value += (1.0 - c1) + (1.0 - c2);
        out.grad_anchors.row_mut(i).scaled_add(-w, &gu);
        out.grad_partner_views.row_mut(i).scaled_add(-w, &gav);
        out.grad_anchor_views.row_mut(i).scaled_add(-w, &guv);
        out.grad_partners.row_mut(i).scaled_add(-w, &ga);
    }
    out.value *= w;
    Ok(out)
}
