//! Training objectives and their gradients with respect to embeddings.
//!
//! Stage one trains with [`known_triplet_loss`]. Stage two combines four
//! terms through [`total_loss`]:
//!
//! ```text
//! L = λ·L_asl + (1 - λ)·L_ucl + L_ktl + L_al
//! ```

mod affinity;
mod contrastive;
mod triplet;

pub use affinity::{affinity_loss, cosine_with_grad, AffinityLoss};
pub use contrastive::{
    affinity_supervised_loss, unsupervised_contrastive_loss, ContrastiveLoss, ViewContrastiveLoss,
};
pub use triplet::{
    known_triplet_loss, knowledge_transfer_loss, triplet_loss, SampledTripletLoss, TransferLoss,
    Triplet,
};

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which stage-two terms participate in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub asl: bool,
    pub ucl: bool,
    pub ktl: bool,
    pub al: bool,
}

impl Components {
    pub const ALL: Self = Self {
        asl: true,
        ucl: true,
        ktl: true,
        al: true,
    };

    pub fn ucl_only() -> Self {
        Self {
            asl: false,
            ucl: true,
            ktl: false,
            al: false,
        }
    }
}

impl Default for Components {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub tau_s: f64,
    pub tau_u: f64,
    pub lambda: f64,
    /// Sum the supervised denominator over positives too (standard SupCon).
    pub include_positives: bool,
    pub components: Components,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.3,
            tau_s: 0.07,
            tau_u: 1.0,
            lambda: 0.35,
            include_positives: false,
            components: Components::ALL,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig(format!("margin {} must be >= 0", self.margin)));
        }
        if !(self.tau_s > 0.0 && self.tau_u > 0.0) {
            return Err(Error::InvalidConfig("temperatures must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("lambda {} is outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// A stage-two minibatch in embedding space.
///
/// Rows `0..member_count` are the sampled members; any further rows are
/// affinity partners encoded alongside them. Every row carries both an
/// embedding of the original feature and one of its augmented view.
#[derive(Debug, Clone)]
pub struct Batch {
    pub embeddings: Array2<f64>,
    pub views: Array2<f64>,
    /// True or pseudo label per row.
    pub labels: Vec<Option<usize>>,
    /// Dataset sample id per row.
    pub sample_ids: Vec<usize>,
    pub member_count: usize,
    /// Row holding each member's affinity partner.
    pub partner_rows: Vec<usize>,
    /// Whether each member belongs to the unlabeled pool.
    pub unlabeled: Vec<bool>,
}

impl Batch {
    pub fn validate(&self) -> Result<()> {
        let rows = self.embeddings.nrows();
        if self.views.dim() != self.embeddings.dim() {
            return Err(Error::dims(self.embeddings.len(), self.views.len(), "batch views"));
        }
        if self.labels.len() != rows || self.sample_ids.len() != rows {
            return Err(Error::dims(rows, self.labels.len(), "batch row metadata"));
        }
        if self.member_count > rows
            || self.partner_rows.len() != self.member_count
            || self.unlabeled.len() != self.member_count
        {
            return Err(Error::dims(self.member_count, self.partner_rows.len(), "batch members"));
        }
        for (m, &r) in self.partner_rows.iter().enumerate() {
            if r >= rows || self.sample_ids[r] == self.sample_ids[m] {
                return Err(Error::Format(format!(
                    "member {m} has an invalid affinity partner row {r}"
                )));
            }
        }
        Ok(())
    }

    /// Rows entering the supervised term: labeled or pseudo-labeled rows,
    /// with a partner row dropped when its sample is already present.
    pub fn supervised_rows(&self) -> Vec<usize> {
        let mut seen: BTreeSet<usize> = self.sample_ids[..self.member_count].iter().copied().collect();
        let mut rows: Vec<usize> = (0..self.member_count).filter(|&r| self.labels[r].is_some()).collect();
        for r in self.member_count..self.embeddings.nrows() {
            if self.labels[r].is_some() && seen.insert(self.sample_ids[r]) {
                rows.push(r);
            }
        }
        rows
    }

    fn unlabeled_members(&self) -> Vec<usize> {
        (0..self.member_count).filter(|&m| self.unlabeled[m]).collect()
    }
}

/// Per-component values; `None` when disabled or degenerate on this batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentValues {
    pub asl: Option<f64>,
    pub ucl: Option<f64>,
    pub ktl: Option<f64>,
    pub al: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: f64,
    pub components: ComponentValues,
    pub grad_embeddings: Array2<f64>,
    pub grad_views: Array2<f64>,
    /// Supervised anchors skipped for lacking positives or negatives.
    pub skipped_anchors: usize,
    /// Enabled components whose preconditions failed on this batch.
    pub degenerate: Vec<&'static str>,
}

fn soft<T>(r: Result<T>, name: &'static str, degenerate: &mut Vec<&'static str>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateBatch(msg)) => {
            log::debug!("{name} skipped: {msg}");
            degenerate.push(name);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Weighted combination of the enabled stage-two terms.
pub fn total_loss<R: Rng + ?Sized>(batch: &Batch, cfg: &LossConfig, rng: &mut R) -> Result<TotalLoss> {
    cfg.validate()?;
    batch.validate()?;
    let c = cfg.components;
    let mut ge = Array2::zeros(batch.embeddings.raw_dim());
    let mut gv = Array2::zeros(batch.views.raw_dim());
    let mut values = ComponentValues::default();
    let mut degenerate = Vec::new();
    let mut skipped_anchors = 0;
    let mut value = 0.0;

    if c.asl {
        let rows = batch.supervised_rows();
        let emb = batch.embeddings.select(Axis(0), &rows);
        let labels: Vec<Option<usize>> = rows.iter().map(|&r| batch.labels[r]).collect();
        let r = affinity_supervised_loss(emb.view(), &labels, cfg.tau_s, cfg.include_positives);
        if let Some(out) = soft(r, "asl", &mut degenerate)? {
            value += cfg.lambda * out.value;
            for (k, &r) in rows.iter().enumerate() {
                ge.row_mut(r).scaled_add(cfg.lambda, &out.grad.row(k));
            }
            skipped_anchors = out.skipped;
            values.asl = Some(out.value);
        }
    }

    if c.ucl {
        let m = batch.member_count;
        let emb = batch.embeddings.slice(ndarray::s![..m, ..]);
        let views = batch.views.slice(ndarray::s![..m, ..]);
        let r = unsupervised_contrastive_loss(emb, views, cfg.tau_u);
        if let Some(out) = soft(r, "ucl", &mut degenerate)? {
            let w = 1.0 - cfg.lambda;
            value += w * out.value;
            ge.slice_mut(ndarray::s![..m, ..]).scaled_add(w, &out.grad);
            gv.slice_mut(ndarray::s![..m, ..]).scaled_add(w, &out.grad_views);
            values.ucl = Some(out.value);
        }
    }

    let unlabeled = batch.unlabeled_members();
    let partners: Vec<usize> = unlabeled.iter().map(|&m| batch.partner_rows[m]).collect();

    if c.ktl {
        let anchors = batch.embeddings.select(Axis(0), &unlabeled);
        let pe = batch.embeddings.select(Axis(0), &partners);
        let r = knowledge_transfer_loss(anchors.view(), pe.view(), cfg.margin, rng);
        if let Some(out) = soft(r, "ktl", &mut degenerate)? {
            value += out.value;
            for (k, (&a, &p)) in unlabeled.iter().zip(&partners).enumerate() {
                ge.row_mut(a).scaled_add(1.0, &out.grad_anchors.row(k));
                ge.row_mut(p).scaled_add(1.0, &out.grad_partners.row(k));
            }
            values.ktl = Some(out.value);
        }
    }

    if c.al {
        let u = batch.embeddings.select(Axis(0), &unlabeled);
        let uv = batch.views.select(Axis(0), &unlabeled);
        let a = batch.embeddings.select(Axis(0), &partners);
        let av = batch.views.select(Axis(0), &partners);
        let r = affinity_loss(u.view(), uv.view(), a.view(), av.view());
        if let Some(out) = soft(r, "al", &mut degenerate)? {
            value += out.value;
            for (k, (&m, &p)) in unlabeled.iter().zip(&partners).enumerate() {
                ge.row_mut(m).scaled_add(1.0, &out.grad_anchors.row(k));
                gv.row_mut(m).scaled_add(1.0, &out.grad_anchor_views.row(k));
                ge.row_mut(p).scaled_add(1.0, &out.grad_partners.row(k));
                gv.row_mut(p).scaled_add(1.0, &out.grad_partner_views.row(k));
            }
            values.al = Some(out.value);
        }
    }

    let enabled = [c.asl, c.ucl, c.ktl, c.al].iter().filter(|e| **e).count();
    if enabled == 0 {
        return Err(Error::InvalidConfig("no loss component enabled".into()));
    }
    if degenerate.len() == enabled {
        return Err(Error::DegenerateBatch(format!(
            "every enabled component is degenerate: {}",
            degenerate.join(", ")
        )));
    }
    Ok(TotalLoss {
        value,
        components: values,
        grad_embeddings: ge,
        grad_views: gv,
        skipped_anchors,
        degenerate,
    })
}
