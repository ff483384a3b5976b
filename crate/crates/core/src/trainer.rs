//! Two-stage training: known-class triplet pre-training on the labeled
//! pool, then retrieval-guided optimisation of the combined objective with
//! an affinity index rebuilt at the start of every epoch.

use std::io::Write;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{build_affinity_index, AffinityIndex};
use crate::data::{augment_view, AugmentConfig, DatasetSplit, FeatureSet};
use crate::encoder::{backward_batch, encode_batch, forward_batch, EncoderParams, Gradients};
use crate::error::{Error, Result};
use crate::eval::{evaluate_points, EvalOptions, EvalSet, Metrics};
use crate::losses::{known_triplet_loss, total_loss, Batch, ComponentValues, LossConfig};

const STAGE1_STREAM: u64 = 1;
const STAGE2_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Noise is in units of the feature set's per-coordinate scale.
    pub augment: AugmentConfig,
    /// Evaluate every this many stage-two epochs (0 disables periodic runs).
    pub eval_every: usize,
    pub eval_restarts: usize,
    pub eval_all_samples: bool,
    /// Back-propagate through affinity partners. Off: partners are encoded
    /// with the current parameters but act as constant targets.
    pub partner_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-5,
            batch_size: 32,
            stage1_epochs: 20,
            stage2_epochs: 100,
            seed: 0,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            eval_every: 1,
            eval_restarts: 10,
            eval_all_samples: false,
            partner_gradients: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum {} is outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        self.loss.validate()
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            set: if self.eval_all_samples { EvalSet::All } else { EvalSet::Unlabeled },
            k: None,
            restarts: self.eval_restarts,
            seed: self.seed,
        }
    }
}

/// Momentum buffers, one per trainable tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Velocity(Vec<Vec<f64>>);

impl Velocity {
    pub fn reset(&mut self) {
        self.0.clear();
    }
}

/// `vel = momentum * vel + grad + wd * param; param -= lr * vel` over the
/// trainable tensors. Layer-norm gains and biases are not decayed. Nothing is
/// updated if any gradient is non-finite.
pub fn sgd_step(
    params: &mut EncoderParams,
    grads: &Gradients,
    cfg: &TrainConfig,
    velocity: &mut Velocity,
) -> Result<()> {
    let grads = grads.tensors();
    for (name, g) in &grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let mut tensors = params.trainable_mut();
    if tensors.len() != grads.len() {
        return Err(Error::dims(tensors.len(), grads.len(), "gradient tensors"));
    }
    if velocity.0.is_empty() {
        velocity.0 = tensors.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    }
    for (((name, p), (gname, g)), vel) in tensors.iter_mut().zip(&grads).zip(&mut velocity.0) {
        debug_assert_eq!(name, gname);
        let wd = if name.starts_with("adapter.ln.") { 0.0 } else { cfg.weight_decay };
        for ((p, &g), v) in p.iter_mut().zip(g.iter()).zip(vel.iter_mut()) {
            *v = cfg.momentum * *v + g + wd * *p;
            *p -= cfg.lr * *v;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogRecord {
    Step {
        stage: Stage,
        epoch: usize,
        step: usize,
        loss: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        components: Option<ComponentValues>,
        skipped_anchors: usize,
        #[serde(skip_serializing_if = "Vec::is_empty", default)]
        degenerate: Vec<String>,
    },
    Epoch {
        stage: Stage,
        epoch: usize,
        mean_loss: Option<f64>,
        steps: usize,
        skipped_batches: usize,
        /// Word position of the stage generator at the end of the epoch.
        rng_position: String,
    },
    Eval {
        metrics: Metrics,
    },
}

/// Append-only record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    pub fn metrics(&self) -> impl Iterator<Item = &Metrics> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Eval { metrics } => Some(metrics),
            _ => None,
        })
    }

    /// Mean loss of each epoch of a stage, in order.
    pub fn epoch_losses(&self, stage: Stage) -> Vec<Option<f64>> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Epoch {
                    stage: s, mean_loss, ..
                } if *s == stage => Some(*mean_loss),
                _ => None,
            })
            .collect()
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Source of the second view fed to the contrastive terms.
#[derive(Debug, Clone, Copy)]
pub enum ViewSource<'a> {
    /// Feature-space augmentation.
    Augment,
    /// Pre-extracted augmented features, row-aligned with the training set.
    Paired(&'a FeatureSet),
}

/// Stage one: minibatches of the labeled pool trained with the known-class
/// triplet loss.
pub fn pretrain_known(
    features: &FeatureSet,
    split: &DatasetSplit,
    params: EncoderParams,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainLog)> {
    cfg.validate()?;
    split.validate(features)?;
    if split.labeled_class_count(features) < 2 {
        return Err(Error::DegenerateData(
            "stage one needs labeled samples from at least two known classes".into(),
        ));
    }
    let mut params = params;
    let mut log = TrainLog::default();
    let mut rng = stage_rng(cfg.seed, STAGE1_STREAM);
    let mut velocity = Velocity::default();
    let mut order = split.labeled_ids.clone();

    for epoch in 0..cfg.stage1_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut steps, mut skipped) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                skipped += 1;
                continue;
            }
            let x = features.features().select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| features.label(i).unwrap()).collect();
            let cache = forward_batch(x.view(), &params)?;
            let out = match known_triplet_loss(cache.embeddings(), &labels, cfg.loss.margin, &mut rng) {
                Ok(out) => out,
                Err(Error::DegenerateBatch(msg)) => {
                    log::debug!("stage 1 epoch {epoch}: batch skipped: {msg}");
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let grads = backward_batch(&cache, out.grad.view(), &params)?;
            sgd_step(&mut params, &grads, cfg, &mut velocity)?;
            log.push(LogRecord::Step {
                stage: Stage::Stage1,
                epoch,
                step: steps,
                loss: out.value,
                components: None,
                skipped_anchors: out.skipped,
                degenerate: Vec::new(),
            });
            sum += out.value;
            steps += 1;
        }
        let mean_loss = (steps > 0).then(|| sum / steps as f64);
        log::info!("stage 1 epoch {epoch}: mean loss {mean_loss:?} over {steps} steps");
        log.push(LogRecord::Epoch {
            stage: Stage::Stage1,
            epoch,
            mean_loss,
            steps,
            skipped_batches: skipped,
            rng_position: rng.get_word_pos().to_string(),
        });
    }
    if !params.all_finite() {
        return Err(Error::NonFinite("encoder parameters after stage 1".into()));
    }
    Ok((params, log))
}

/// Best checkpoint by NEW accuracy (ALL when there are no unknown classes).
#[derive(Debug, Clone)]
pub struct BestCheckpoint {
    pub metrics: Metrics,
    /// Parameters as stored on disk (rounded through `f32`).
    pub params: EncoderParams,
}

fn selection_score(m: &Metrics) -> f64 {
    m.acc_new.unwrap_or(m.acc_all)
}

/// Evaluates `params` exactly as a reloaded checkpoint would be evaluated.
pub fn evaluate_checkpoint(
    features: &FeatureSet,
    split: &DatasetSplit,
    params: &EncoderParams,
    opts: &EvalOptions,
) -> Result<Metrics> {
    let q = params.quantized();
    let ids = opts.set.ids(split);
    let x = features.features().select(Axis(0), &ids);
    let emb = encode_batch(x.view(), &q)?;
    Ok(evaluate_points(emb.view(), &ids, features, split, opts)?.0)
}

fn assemble_batch(
    members: &[usize],
    split: &DatasetSplit,
    index: &AffinityIndex,
) -> (Vec<usize>, Vec<Option<usize>>, Vec<usize>, Vec<bool>) {
    let m = members.len();
    let mut sample_ids = members.to_vec();
    sample_ids.extend(members.iter().map(|&i| index.nn_of()[i]));
    let labels = sample_ids.iter().map(|&i| index.label_of(i)).collect();
    let partner_rows = (m..2 * m).collect();
    let unlabeled = members.iter().map(|&i| !split.is_labeled(i)).collect();
    (sample_ids, labels, partner_rows, unlabeled)
}

/// Stage two. The affinity index is rebuilt from the current parameters at
/// the start of every epoch; evaluation runs before the first epoch and then
/// every `eval_every` epochs, plus after the last one.
pub fn optimize_boundaries(
    features: &FeatureSet,
    split: &DatasetSplit,
    params: EncoderParams,
    cfg: &TrainConfig,
    views: ViewSource<'_>,
) -> Result<(EncoderParams, TrainLog, Option<BestCheckpoint>)> {
    cfg.validate()?;
    split.validate(features)?;
    if let ViewSource::Paired(v) = views {
        if v.len() != features.len() || v.dim() != features.dim() {
            return Err(Error::dims(features.len(), v.len(), "paired view file"));
        }
    }
    let augment = cfg.augment.scaled_to(features.coordinate_scale());
    let eval_opts = cfg.eval_options();
    let mut params = params;
    let mut log = TrainLog::default();
    let mut best: Option<BestCheckpoint> = None;
    let mut rng = stage_rng(cfg.seed, STAGE2_STREAM);
    let mut velocity = Velocity::default();
    let mut order: Vec<usize> = (0..features.len()).collect();

    let mut record_eval = |epoch: usize, params: &EncoderParams, log: &mut TrainLog| -> Result<()> {
        let mut metrics = evaluate_checkpoint(features, split, params, &eval_opts)?;
        metrics.epoch = Some(epoch);
        log::info!(
            "eval epoch {epoch}: all {:.4} old {:?} new {:?}",
            metrics.acc_all, metrics.acc_old, metrics.acc_new
        );
        if best
            .as_ref()
            .is_none_or(|b| selection_score(&metrics) > selection_score(&b.metrics))
        {
            best = Some(BestCheckpoint {
                metrics: metrics.clone(),
                params: params.quantized(),
            });
        }
        log.push(LogRecord::Eval { metrics });
        Ok(())
    };

    record_eval(0, &params, &mut log)?;
    for epoch in 1..=cfg.stage2_epochs {
        let index = build_affinity_index(features, split, &params)?;
        order.shuffle(&mut rng);
        let (mut sum, mut steps, mut skipped) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                skipped += 1;
                continue;
            }
            let (sample_ids, labels, partner_rows, unlabeled) = assemble_batch(chunk, split, &index);
            let x = features.features().select(Axis(0), &sample_ids);
            let x_aug = match views {
                ViewSource::Augment => {
                    let mut out = Array2::zeros(x.raw_dim());
                    for (mut o, row) in out.rows_mut().into_iter().zip(x.rows()) {
                        o.assign(&augment_view(row, &augment, &mut rng));
                    }
                    out
                }
                ViewSource::Paired(v) => v.features().select(Axis(0), &sample_ids),
            };
            let rows = sample_ids.len();
            let stacked = concatenate![Axis(0), x, x_aug];
            let cache = forward_batch(stacked.view(), &params)?;
            let emb = cache.embeddings();
            let batch = Batch {
                embeddings: emb.slice(s![..rows, ..]).to_owned(),
                views: emb.slice(s![rows.., ..]).to_owned(),
                labels,
                sample_ids,
                member_count: chunk.len(),
                partner_rows,
                unlabeled,
            };
            let out = match total_loss(&batch, &cfg.loss, &mut rng) {
                Ok(out) => out,
                Err(Error::DegenerateBatch(msg)) => {
                    log::debug!("stage 2 epoch {epoch}: batch skipped: {msg}");
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut upstream = concatenate![Axis(0), out.grad_embeddings, out.grad_views];
            if !cfg.partner_gradients {
                let m = chunk.len();
                upstream.slice_mut(s![m..rows, ..]).fill(0.0);
                upstream.slice_mut(s![rows + m.., ..]).fill(0.0);
            }
            let grads = backward_batch(&cache, upstream.view(), &params)?;
            sgd_step(&mut params, &grads, cfg, &mut velocity).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} (stage 2 epoch {epoch})")),
                e => e,
            })?;
            log.push(LogRecord::Step {
                stage: Stage::Stage2,
                epoch,
                step: steps,
                loss: out.value,
                components: Some(out.components),
                skipped_anchors: out.skipped_anchors,
                degenerate: out.degenerate.iter().map(|s| s.to_string()).collect(),
            });
            sum += out.value;
            steps += 1;
        }
        let mean_loss = (steps > 0).then(|| sum / steps as f64);
        log::info!("stage 2 epoch {epoch}: mean loss {mean_loss:?} over {steps} steps");
        log.push(LogRecord::Epoch {
            stage: Stage::Stage2,
            epoch,
            mean_loss,
            steps,
            skipped_batches: skipped,
            rng_position: rng.get_word_pos().to_string(),
        });
        if (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) || epoch == cfg.stage2_epochs {
            record_eval(epoch, &params, &mut log)?;
        }
    }
    if !params.all_finite() {
        return Err(Error::NonFinite("encoder parameters after stage 2".into()));
    }
    Ok((params, log, best))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: TrainLog,
    pub best: Option<BestCheckpoint>,
}

/// Both stages back to back; optimizer state is reset between them.
pub fn train(
    features: &FeatureSet,
    split: &DatasetSplit,
    params: EncoderParams,
    cfg: &TrainConfig,
    views: ViewSource<'_>,
) -> Result<TrainOutcome> {
    let (params, mut log) = if cfg.stage1_epochs > 0 {
        pretrain_known(features, split, params, cfg)?
    } else {
        (params, TrainLog::default())
    };
    let (params, log2, best) = optimize_boundaries(features, split, params, cfg, views)?;
    log.extend(log2);
    Ok(TrainOutcome { params, log, best })
}
