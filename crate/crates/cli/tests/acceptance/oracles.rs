//! Independent reference implementations and finite-difference checks.

use fsgcd_core::affinity::AffinityIndex;
use fsgcd_core::data::DatasetSplit;
use fsgcd_core::encoder::{encode_backward, forward_batch, EncoderConfig, EncoderParams, Gradients};
use fsgcd_core::eval::{ch_index, hungarian};
use fsgcd_core::losses::{
    affinity_loss, affinity_supervised_loss, known_triplet_loss, knowledge_transfer_loss, total_loss,
    triplet_loss, unsupervised_contrastive_loss, Batch, Components, LossConfig,
};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const INSTANCES: usize = 100;
/// Instances closer than this to a hinge or ReLU kink are redrawn.
const KINK_MARGIN: f64 = 1e-3;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut x = gaussian(rows, cols, rng);
    for mut r in x.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    x
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + FD_STEP;
        let up = f(&probe);
        probe[[r, c]] = orig - FD_STEP;
        let down = f(&probe);
        probe[[r, c]] = orig;
        g[[r, c]] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

/// `max|a - n| / max(max|a|, max|n|, 1e-8)`.
pub fn rel_err<'a>(analytic: impl IntoIterator<Item = &'a f64>, numeric: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut diff, mut scale) = (0.0f64, 1e-8f64);
    for (a, n) in analytic.into_iter().zip(numeric) {
        diff = diff.max((a - n).abs());
        scale = scale.max(a.abs()).max(n.abs());
    }
    diff / scale
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub instances: usize,
    pub worst: f64,
}

impl GradReport {
    fn add(&mut self, err: f64) {
        self.instances += 1;
        self.worst = self.worst.max(err);
    }

    pub fn passed(&self) -> bool {
        self.instances >= INSTANCES && self.worst <= GRAD_TOL
    }
}

fn hinge_arg(a: ndarray::ArrayView1<f64>, p: ndarray::ArrayView1<f64>, n: ndarray::ArrayView1<f64>, margin: f64) -> f64 {
    let ap = &a - &p;
    let an = &a - &n;
    ap.dot(&ap) - an.dot(&an) + margin
}

pub fn check_triplet(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    while rep.instances < INSTANCES {
        let d = rng.random_range(2..8);
        let x = gaussian(3, d, &mut rng) * 0.5;
        let margin = 0.3;
        if hinge_arg(x.row(0), x.row(1), x.row(2), margin).abs() < KINK_MARGIN {
            continue;
        }
        let f = |x: &Array2<f64>| triplet_loss(x.row(0), x.row(1), x.row(2), margin).unwrap().value;
        let t = triplet_loss(x.row(0), x.row(1), x.row(2), margin).unwrap();
        let mut analytic = Array2::zeros((3, d));
        analytic.row_mut(0).assign(&t.grad_anchor);
        analytic.row_mut(1).assign(&t.grad_positive);
        analytic.row_mut(2).assign(&t.grad_negative);
        rep.add(rel_err(&analytic, &numeric_grad(&x, f)));
    }
    rep
}

pub fn check_known_triplet(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    while rep.instances < INSTANCES {
        let b = rng.random_range(4..10);
        let d = rng.random_range(2..6);
        let x = unit_rows(b, d, &mut rng);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
        let sampler = ChaCha8Rng::seed_from_u64(rng.random());
        let Ok(out) = known_triplet_loss(x.view(), &labels, 0.3, &mut sampler.clone()) else {
            continue;
        };
        if out.triplets.iter().any(|&(a, p, n)| hinge_arg(x.row(a), x.row(p), x.row(n), 0.3).abs() < KINK_MARGIN) {
            continue;
        }
        let f = |x: &Array2<f64>| known_triplet_loss(x.view(), &labels, 0.3, &mut sampler.clone()).unwrap().value;
        rep.add(rel_err(&out.grad, &numeric_grad(&x, f)));
    }
    rep
}

fn random_partial_labels(b: usize, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
    (0..b)
        .map(|_| if rng.random_bool(0.25) { None } else { Some(rng.random_range(0..3)) })
        .collect()
}

pub fn check_supervised_contrastive(seed: u64, include_positives: bool) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    while rep.instances < INSTANCES {
        let b = rng.random_range(3..9);
        let d = rng.random_range(2..6);
        let x = unit_rows(b, d, &mut rng);
        let labels = random_partial_labels(b, &mut rng);
        let tau = 0.07;
        let Ok(out) = affinity_supervised_loss(x.view(), &labels, tau, include_positives) else {
            continue;
        };
        let f = |x: &Array2<f64>| affinity_supervised_loss(x.view(), &labels, tau, include_positives).unwrap().value;
        rep.add(rel_err(&out.grad, &numeric_grad(&x, f)));
    }
    rep
}

pub fn check_unsupervised_contrastive(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    while rep.instances < INSTANCES {
        let b = rng.random_range(2..8);
        let d = rng.random_range(2..6);
        let tau = if rep.instances % 2 == 0 { 1.0 } else { 0.2 };
        // Views stacked under the embeddings so one difference pass covers both.
        let x = unit_rows(2 * b, d, &mut rng);
        let split = |x: &Array2<f64>| (x.slice(ndarray::s![..b, ..]).to_owned(), x.slice(ndarray::s![b.., ..]).to_owned());
        let (e, v) = split(&x);
        let out = unsupervised_contrastive_loss(e.view(), v.view(), tau).unwrap();
        let analytic = ndarray::concatenate![Axis(0), out.grad, out.grad_views];
        let f = |x: &Array2<f64>| {
            let (e, v) = split(x);
            unsupervised_contrastive_loss(e.view(), v.view(), tau).unwrap().value
        };
        rep.add(rel_err(&analytic, &numeric_grad(&x, f)));
    }
    rep
}

pub fn check_knowledge_transfer(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    while rep.instances < INSTANCES {
        let b = rng.random_range(2..8);
        let d = rng.random_range(2..6);
        let x = unit_rows(2 * b, d, &mut rng);
        let sampler = ChaCha8Rng::seed_from_u64(rng.random());
        let split = |x: &Array2<f64>| (x.slice(ndarray::s![..b, ..]).to_owned(), x.slice(ndarray::s![b.., ..]).to_owned());
        let (a, p) = split(&x);
        let out = knowledge_transfer_loss(a.view(), p.view(), 0.3, &mut sampler.clone()).unwrap();
        if out
            .negatives
            .iter()
            .enumerate()
            .any(|(i, &n)| hinge_arg(a.row(i), p.row(i), a.row(n), 0.3).abs() < KINK_MARGIN)
        {
            continue;
        }
        let analytic = ndarray::concatenate![Axis(0), out.grad_anchors, out.grad_partners];
        let f = |x: &Array2<f64>| {
            let (a, p) = split(x);
            knowledge_transfer_loss(a.view(), p.view(), 0.3, &mut sampler.clone()).unwrap().value
        };
        rep.add(rel_err(&analytic, &numeric_grad(&x, f)));
    }
    rep
}

pub fn check_affinity(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    while rep.instances < INSTANCES {
        let b = rng.random_range(1..6);
        let d = rng.random_range(2..6);
        // Not unit-norm: the cosine normalisation is part of what is checked.
        let x = gaussian(4 * b, d, &mut rng);
        let parts = |x: &Array2<f64>| {
            (0..4)
                .map(|k| x.slice(ndarray::s![k * b..(k + 1) * b, ..]).to_owned())
                .collect::<Vec<_>>()
        };
        let p = parts(&x);
        let out = affinity_loss(p[0].view(), p[1].view(), p[2].view(), p[3].view()).unwrap();
        let analytic = ndarray::concatenate![
            Axis(0),
            out.grad_anchors,
            out.grad_anchor_views,
            out.grad_partners,
            out.grad_partner_views
        ];
        let f = |x: &Array2<f64>| {
            let p = parts(x);
            affinity_loss(p[0].view(), p[1].view(), p[2].view(), p[3].view()).unwrap().value
        };
        rep.add(rel_err(&analytic, &numeric_grad(&x, f)));
    }
    rep
}

fn random_batch(rng: &mut ChaCha8Rng) -> Batch {
    let m = rng.random_range(3..7);
    let d = rng.random_range(2..6);
    let rows = 2 * m;
    let mut sample_ids: Vec<usize> = (0..m).collect();
    // Partners are other samples; some coincide with members.
    sample_ids.extend((0..m).map(|i| {
        if rng.random_bool(0.3) {
            (i + 1) % m
        } else {
            m + i
        }
    }));
    let unlabeled: Vec<bool> = (0..m).map(|_| rng.random_bool(0.6)).collect();
    let labels = (0..rows)
        .map(|r| {
            let labeled = r < m && !unlabeled[r];
            (labeled || rng.random_bool(0.3)).then(|| rng.random_range(0..2))
        })
        .collect();
    Batch {
        embeddings: unit_rows(rows, d, rng),
        views: unit_rows(rows, d, rng),
        labels,
        sample_ids,
        member_count: m,
        partner_rows: (m..rows).collect(),
        unlabeled,
    }
}

pub fn check_total(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    let cfg = LossConfig {
        tau_s: 0.5,
        components: Components::ALL,
        ..LossConfig::default()
    };
    while rep.instances < INSTANCES {
        let batch = random_batch(&mut rng);
        let sampler = ChaCha8Rng::seed_from_u64(rng.random());
        let Ok(out) = total_loss(&batch, &cfg, &mut sampler.clone()) else {
            continue;
        };
        // Redraw if any transfer triplet sits on its hinge.
        let unl: Vec<usize> = (0..batch.member_count).filter(|&m| batch.unlabeled[m]).collect();
        if unl.len() >= 2 {
            let a = batch.embeddings.select(Axis(0), &unl);
            let p = batch.embeddings.select(Axis(0), &unl.iter().map(|&m| batch.partner_rows[m]).collect::<Vec<_>>());
            let t = knowledge_transfer_loss(a.view(), p.view(), cfg.margin, &mut sampler.clone()).unwrap();
            if t.negatives.iter().enumerate().any(|(i, &n)| hinge_arg(a.row(i), p.row(i), a.row(n), cfg.margin).abs() < KINK_MARGIN) {
                continue;
            }
        }
        let rows = batch.embeddings.nrows();
        let x = ndarray::concatenate![Axis(0), batch.embeddings, batch.views];
        let analytic = ndarray::concatenate![Axis(0), out.grad_embeddings, out.grad_views];
        let f = |x: &Array2<f64>| {
            let mut b = batch.clone();
            b.embeddings = x.slice(ndarray::s![..rows, ..]).to_owned();
            b.views = x.slice(ndarray::s![rows.., ..]).to_owned();
            total_loss(&b, &cfg, &mut sampler.clone()).unwrap().value
        };
        rep.add(rel_err(&analytic, &numeric_grad(&x, f)));
    }
    rep
}

fn perturbed_params(seed: u64, train_scale: bool) -> EncoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EncoderConfig {
        input_dim: rng.random_range(3..7),
        bottleneck_dim: rng.random_range(1..3),
        hidden_dim: rng.random_range(3..9),
        embed_dim: rng.random_range(2..5),
        scale: 0.1 + rng.random::<f64>(),
        train_scale,
    };
    let mut p = EncoderParams::init(cfg, &mut rng).unwrap();
    // Move every trainable tensor off its initial value.
    for (_, t) in p.trainable_mut() {
        for v in t.iter_mut() {
            *v += 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    p
}

pub fn check_encoder(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    while rep.instances < INSTANCES {
        let mut p = perturbed_params(rng.random(), rep.instances % 2 == 1);
        let d = p.input_dim();
        let v: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let upstream: Array1<f64> = (0..p.embed_dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let cache = forward_batch(v.view().insert_axis(Axis(0)), &p).unwrap();
        if cache.relu_margin() < KINK_MARGIN {
            continue;
        }
        let grads: Gradients = encode_backward(v.view(), &p, upstream.view()).unwrap();
        let analytic: Vec<f64> = grads.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect();
        let objective = |p: &EncoderParams| {
            let e = forward_batch(v.view().insert_axis(Axis(0)), p).unwrap().into_embeddings();
            e.row(0).dot(&upstream)
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        let sizes: Vec<usize> = p.trainable_mut().iter().map(|(_, t)| t.len()).collect();
        for (k, &len) in sizes.iter().enumerate() {
            for i in 0..len {
                let orig = p.trainable_mut()[k].1[i];
                p.trainable_mut()[k].1[i] = orig + FD_STEP;
                let up = objective(&p);
                p.trainable_mut()[k].1[i] = orig - FD_STEP;
                let down = objective(&p);
                p.trainable_mut()[k].1[i] = orig;
                numeric.push((up - down) / (2.0 * FD_STEP));
            }
        }
        rep.add(rel_err(&analytic, &numeric));
    }
    rep
}

/// Heap's algorithm over all permutations of `0..n`.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            go(k - 1, a, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    go(n, &mut (0..n).collect(), &mut out);
    out
}

/// Number of random matrices where the solver's cost differs from the
/// brute-force minimum.
pub fn hungarian_mismatches(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<Vec<usize>>> = (0..=7).map(permutations).collect();
    let mut bad = 0;
    for t in 0..trials {
        let n = 1 + t % 7;
        // Small integer costs make ties common and keep sums exact.
        let cost = Array2::from_shape_simple_fn((n, n), || rng.random_range(0..10) as f64);
        let best = perms[n]
            .iter()
            .map(|p| p.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let got = hungarian(cost.view()).unwrap();
        let mut cols = got.row_to_col.clone();
        cols.sort_unstable();
        let recomputed: f64 = got.row_to_col.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum();
        if cols != (0..n).collect::<Vec<_>>() || recomputed != best || got.total_cost != best {
            bad += 1;
        }
    }
    bad
}

/// Random snapshots checked against an exhaustive cosine scan.
pub fn affinity_mismatches(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..trials {
        let n = rng.random_range(4..=500);
        let d = rng.random_range(2..12);
        let x = gaussian(n, d, &mut rng);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let n_lab = rng.random_range(1..n);
        let mut labeled = ids[..n_lab].to_vec();
        let mut unlabeled = ids[n_lab..].to_vec();
        labeled.sort_unstable();
        unlabeled.sort_unstable();
        let labels: Vec<Option<usize>> = (0..n).map(|i| labeled.binary_search(&i).is_ok().then_some(i % 3)).collect();
        let split = DatasetSplit {
            sample_count: n,
            class_count: 3,
            labeled_ids: labeled.clone(),
            unlabeled_ids: unlabeled,
            known_classes: vec![0, 1, 2],
            unknown_classes: vec![],
            c_l: 1.0,
            p_l: 0.5,
            seed: 0,
        };
        let index = AffinityIndex::from_embeddings(x.clone(), &split, &labels).unwrap();
        let cos = |i: usize, j: usize| {
            let (a, b) = (x.row(i), x.row(j));
            a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
        };
        for i in 0..n {
            let i_lab = labels[i].is_some();
            let best = (0..n)
                .filter(|&j| j != i && !(i_lab && labels[j].is_some()))
                .map(|j| (j, cos(i, j)))
                .fold((usize::MAX, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
            if index.nn_of()[i] != best.0 {
                bad += 1;
                break;
            }
        }
    }
    bad
}

/// Direct trace formula, computed via the pairwise-distance identity
/// `Σ_i |x_i - μ|² = (1 / 2n) Σ_{i,j} |x_i - x_j|²`.
pub fn ch_reference(x: ArrayView2<f64>, assignment: &[usize]) -> f64 {
    let sq = |i: usize, j: usize| {
        let d = &x.row(i) - &x.row(j);
        d.dot(&d)
    };
    let scatter = |members: &[usize]| {
        let mut s = 0.0;
        for &i in members {
            for &j in members {
                s += sq(i, j);
            }
        }
        s / (2.0 * members.len() as f64)
    };
    let n = x.nrows();
    let k = assignment.iter().max().unwrap() + 1;
    let all: Vec<usize> = (0..n).collect();
    let total = scatter(&all);
    let within: f64 = (0..k)
        .map(|c| {
            let m: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            if m.is_empty() {
                0.0
            } else {
                scatter(&m)
            }
        })
        .sum();
    let k_used = (0..k).filter(|c| assignment.contains(c)).count() as f64;
    ((total - within) / (k_used - 1.0)) / (within / (n as f64 - k_used))
}

/// Worst relative deviations: (reference formula, invariance under
/// rotation + translation + uniform scaling).
pub fn ch_deviations(trials: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_ref, mut worst_inv) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let n = rng.random_range(6..60);
        let d = rng.random_range(1..6);
        let k = rng.random_range(2..5.min(n - 1));
        let mut assignment: Vec<usize> = (0..n).map(|i| i % k).collect();
        assignment.shuffle(&mut rng);
        let x = gaussian(n, d, &mut rng);
        let got = ch_index(x.view(), &assignment).unwrap();
        let reference = ch_reference(x.view(), &assignment);
        worst_ref = worst_ref.max((got - reference).abs() / reference.abs());

        // Random orthogonal matrix by Gram-Schmidt.
        let g = gaussian(d, d, &mut rng);
        let mut q = Array2::<f64>::zeros((d, d));
        for c in 0..d {
            let mut v = g.column(c).to_owned();
            for p in 0..c {
                let prev = q.column(p).to_owned();
                let proj = v.dot(&prev);
                v.scaled_add(-proj, &prev);
            }
            let nv = v.dot(&v).sqrt();
            q.column_mut(c).assign(&(v / nv));
        }
        let shift: Array1<f64> = (0..d).map(|_| 10.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let scale = 0.01 + 100.0 * rng.random::<f64>();
        let moved = x.dot(&q) * scale + &shift;
        let again = ch_index(moved.view(), &assignment).unwrap();
        worst_inv = worst_inv.max((again - got).abs() / got.abs());
    }
    (worst_ref, worst_inv)
}
