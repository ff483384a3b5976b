//! Trainable encoder: a bottleneck adapter fused residually beside a frozen
//! block, followed by a projection head and L2 normalisation.
//!
//! Row vectors throughout. For an input `x`:
//!
//! ```text
//! adapter(x) = relu(LN_a(x) · W_down) · W_up
//! block(x)   = LN_f(x) · M + c + x + s · adapter(x)
//! embed(x)   = normalize(relu(block(x) · W1 + b1) · W2 + b2)
//! ```
//!
//! `M`, `c` and `LN_f` are frozen; the adapter weights, `LN_a` and the head
//! are trainable. The scale `s` is fixed unless `train_scale` is set.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-12;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSGP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub bottleneck_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub scale: f64,
    pub train_scale: bool,
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            bottleneck_dim: 64.min(input_dim.saturating_sub(1)).max(1),
            hidden_dim: 2048,
            embed_dim: 256,
            scale: 0.1,
            train_scale: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 2 {
            return Err(Error::InvalidConfig("input_dim must be at least 2".into()));
        }
        if self.bottleneck_dim == 0 || self.bottleneck_dim >= self.input_dim {
            return Err(Error::InvalidConfig(format!(
                "bottleneck_dim {} must be in [1, input_dim = {})",
                self.bottleneck_dim, self.input_dim
            )));
        }
        if self.hidden_dim == 0 || self.embed_dim < 2 {
            return Err(Error::InvalidConfig("head dimensions too small".into()));
        }
        if !self.scale.is_finite() {
            return Err(Error::InvalidConfig("scale must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }
}

/// Normalises each row to zero mean and unit variance; returns the
/// normalised rows before gain and bias.
pub fn standardize_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let d = row.len() as f64;
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

fn affine_rows(xhat: &Array2<f64>, ln: &LayerNorm) -> Array2<f64> {
    xhat * &ln.gain + &ln.bias
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    pub w_down: Array2<f64>,
    pub w_up: Array2<f64>,
    pub ln_adapter: LayerNorm,
    pub scale: f64,
    pub frozen_mlp: Array2<f64>,
    pub frozen_bias: Array1<f64>,
    pub ln_frozen: LayerNorm,
    pub head_w1: Array2<f64>,
    pub head_b1: Array1<f64>,
    pub head_w2: Array2<f64>,
    pub head_b2: Array1<f64>,
}

impl EncoderParams {
    /// Fresh parameters: Gaussian down-projection, zero up-projection (so the
    /// adapter starts as a no-op), identity frozen block and a He-initialised
    /// head.
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let EncoderConfig {
            input_dim: d,
            bottleneck_dim: b,
            hidden_dim: h,
            embed_dim: e,
            ..
        } = config;
        let mut gauss = |rows: usize, cols: usize, std: f64| {
            let normal = Normal::new(0.0, std).unwrap();
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
        };
        let w_down = gauss(d, b, (1.0 / d as f64).sqrt());
        let head_w1 = gauss(d, h, (2.0 / d as f64).sqrt());
        let head_w2 = gauss(h, e, (1.0 / h as f64).sqrt());
        Ok(Self {
            config,
            w_down,
            w_up: Array2::zeros((b, d)),
            ln_adapter: LayerNorm::identity(d),
            scale: config.scale,
            frozen_mlp: Array2::eye(d),
            frozen_bias: Array1::zeros(d),
            ln_frozen: LayerNorm::identity(d),
            head_w1,
            head_b1: Array1::zeros(h),
            head_w2,
            head_b2: Array1::zeros(e),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Trainable tensors, in a fixed order, as flat mutable slices.
    pub fn trainable_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("adapter.w_down", self.w_down.as_slice_mut().unwrap()),
            ("adapter.w_up", self.w_up.as_slice_mut().unwrap()),
            ("adapter.ln.gain", self.ln_adapter.gain.as_slice_mut().unwrap()),
            ("adapter.ln.bias", self.ln_adapter.bias.as_slice_mut().unwrap()),
            ("head.w1", self.head_w1.as_slice_mut().unwrap()),
            ("head.b1", self.head_b1.as_slice_mut().unwrap()),
            ("head.w2", self.head_w2.as_slice_mut().unwrap()),
            ("head.b2", self.head_b2.as_slice_mut().unwrap()),
        ];
        if self.config.train_scale {
            out.push(("adapter.scale", std::slice::from_mut(&mut self.scale)));
        }
        out
    }

    pub fn trainable_count(&self) -> usize {
        let c = &self.config;
        2 * c.input_dim * c.bottleneck_dim
            + 2 * c.input_dim
            + c.input_dim * c.hidden_dim
            + c.hidden_dim
            + c.hidden_dim * c.embed_dim
            + c.embed_dim
            + usize::from(c.train_scale)
    }

    pub fn frozen_count(&self) -> usize {
        let d = self.config.input_dim;
        d * d + 3 * d + usize::from(!self.config.train_scale)
    }

    fn named_tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let shape2 = |a: &Array2<f64>| vec![a.nrows(), a.ncols()];
        let shape1 = |a: &Array1<f64>| vec![a.len()];
        vec![
            ("adapter.w_down", shape2(&self.w_down), self.w_down.as_slice().unwrap()),
            ("adapter.w_up", shape2(&self.w_up), self.w_up.as_slice().unwrap()),
            ("adapter.ln.gain", shape1(&self.ln_adapter.gain), self.ln_adapter.gain.as_slice().unwrap()),
            ("adapter.ln.bias", shape1(&self.ln_adapter.bias), self.ln_adapter.bias.as_slice().unwrap()),
            ("adapter.scale", vec![1], std::slice::from_ref(&self.scale)),
            ("frozen.mlp.weight", shape2(&self.frozen_mlp), self.frozen_mlp.as_slice().unwrap()),
            ("frozen.mlp.bias", shape1(&self.frozen_bias), self.frozen_bias.as_slice().unwrap()),
            ("frozen.ln.gain", shape1(&self.ln_frozen.gain), self.ln_frozen.gain.as_slice().unwrap()),
            ("frozen.ln.bias", shape1(&self.ln_frozen.bias), self.ln_frozen.bias.as_slice().unwrap()),
            ("head.w1", shape2(&self.head_w1), self.head_w1.as_slice().unwrap()),
            ("head.b1", shape1(&self.head_b1), self.head_b1.as_slice().unwrap()),
            ("head.w2", shape2(&self.head_w2), self.head_w2.as_slice().unwrap()),
            ("head.b2", shape1(&self.head_b2), self.head_b2.as_slice().unwrap()),
        ]
    }

    fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        Some(match name {
            "adapter.w_down" => self.w_down.as_slice_mut().unwrap(),
            "adapter.w_up" => self.w_up.as_slice_mut().unwrap(),
            "adapter.ln.gain" => self.ln_adapter.gain.as_slice_mut().unwrap(),
            "adapter.ln.bias" => self.ln_adapter.bias.as_slice_mut().unwrap(),
            "adapter.scale" => std::slice::from_mut(&mut self.scale),
            "frozen.mlp.weight" => self.frozen_mlp.as_slice_mut().unwrap(),
            "frozen.mlp.bias" => self.frozen_bias.as_slice_mut().unwrap(),
            "frozen.ln.gain" => self.ln_frozen.gain.as_slice_mut().unwrap(),
            "frozen.ln.bias" => self.ln_frozen.bias.as_slice_mut().unwrap(),
            "head.w1" => self.head_w1.as_slice_mut().unwrap(),
            "head.b1" => self.head_b1.as_slice_mut().unwrap(),
            "head.w2" => self.head_w2.as_slice_mut().unwrap(),
            "head.b2" => self.head_b2.as_slice_mut().unwrap(),
            _ => return None,
        })
    }

    /// Copy of the frozen tensors, used to verify they never move.
    pub fn frozen_snapshot(&self) -> Vec<f64> {
        self.named_tensors()
            .into_iter()
            .filter(|(name, ..)| {
                name.starts_with("frozen.") || (*name == "adapter.scale" && !self.config.train_scale)
            })
            .flat_map(|(.., data)| data.iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(.., data)| data.iter().all(|v| v.is_finite()))
    }

    /// Parameters rounded through `f32`, exactly what a checkpoint stores.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for (name, ..) in self.named_tensors() {
            for v in out.tensor_mut(name).unwrap() {
                *v = *v as f32 as f64;
            }
        }
        out.config.scale = out.scale;
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::from(self.config.train_scale).to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for s in shape {
                out.extend_from_slice(&(s as u64).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let tensors = read_tensors(bytes)?;
        let flags = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let shape_of = |name: &str| {
            tensors
                .iter()
                .find(|t| t.0 == name)
                .map(|t| t.1.clone())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
        };
        let down = shape_of("adapter.w_down")?;
        let w1 = shape_of("head.w1")?;
        let w2 = shape_of("head.w2")?;
        if down.len() != 2 || w1.len() != 2 || w2.len() != 2 {
            return Err(Error::Format("weight tensors must be 2-D".into()));
        }
        let config = EncoderConfig {
            input_dim: down[0],
            bottleneck_dim: down[1],
            hidden_dim: w1[1],
            embed_dim: w2[1],
            scale: 0.0,
            train_scale: flags & 1 == 1,
        };
        config.validate()?;
        let mut p = Self::zeros(config);
        let expected: Vec<(&str, Vec<usize>)> = p
            .named_tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        for (name, shape) in expected {
            let (_, got_shape, data) = tensors
                .iter()
                .find(|t| t.0 == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if *got_shape != shape {
                return Err(Error::DimensionMismatch {
                    expected: shape.iter().product(),
                    actual: got_shape.iter().product(),
                    context: format!("tensor {name} has shape {got_shape:?}, expected {shape:?}"),
                });
            }
            p.tensor_mut(name).unwrap().copy_from_slice(data);
        }
        p.config.scale = p.scale;
        if !p.all_finite() {
            return Err(Error::NonFinite("checkpoint".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Replaces the frozen block with weights read from a checkpoint-format
    /// file holding any subset of the `frozen.*` tensors.
    pub fn load_frozen_block(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensors = read_tensors(&bytes)?;
        let d = self.config.input_dim;
        for (name, shape, data) in tensors {
            if !name.starts_with("frozen.") {
                continue;
            }
            let want = if name == "frozen.mlp.weight" { vec![d, d] } else { vec![d] };
            if shape != want {
                return Err(Error::dims(want.iter().product(), shape.iter().product(), name));
            }
            let slot = self
                .tensor_mut(&name)
                .ok_or_else(|| Error::Format(format!("unknown frozen tensor {name}")))?;
            slot.copy_from_slice(&data);
        }
        Ok(())
    }

    fn zeros(config: EncoderConfig) -> Self {
        let EncoderConfig {
            input_dim: d,
            bottleneck_dim: b,
            hidden_dim: h,
            embed_dim: e,
            ..
        } = config;
        Self {
            config,
            w_down: Array2::zeros((d, b)),
            w_up: Array2::zeros((b, d)),
            ln_adapter: LayerNorm::identity(d),
            scale: config.scale,
            frozen_mlp: Array2::zeros((d, d)),
            frozen_bias: Array1::zeros(d),
            ln_frozen: LayerNorm::identity(d),
            head_w1: Array2::zeros((d, h)),
            head_b1: Array1::zeros(h),
            head_w2: Array2::zeros((h, e)),
            head_b2: Array1::zeros(e),
        }
    }
}

type RawTensor = (String, Vec<usize>, Vec<f64>);

fn read_tensors(bytes: &[u8]) -> Result<Vec<RawTensor>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic, expected FSGP".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let _flags = cur.u32()?;
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| cur.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = cur
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        out.push((name, shape, data));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Gradients for the trainable tensors, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_down: Array2<f64>,
    pub w_up: Array2<f64>,
    pub ln_gain: Array1<f64>,
    pub ln_bias: Array1<f64>,
    pub head_w1: Array2<f64>,
    pub head_b1: Array1<f64>,
    pub head_w2: Array2<f64>,
    pub head_b2: Array1<f64>,
    /// Present only when the residual scale is trainable.
    pub scale: Option<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        Self {
            w_down: Array2::zeros(p.w_down.raw_dim()),
            w_up: Array2::zeros(p.w_up.raw_dim()),
            ln_gain: Array1::zeros(p.ln_adapter.gain.len()),
            ln_bias: Array1::zeros(p.ln_adapter.bias.len()),
            head_w1: Array2::zeros(p.head_w1.raw_dim()),
            head_b1: Array1::zeros(p.head_b1.len()),
            head_w2: Array2::zeros(p.head_w2.raw_dim()),
            head_b2: Array1::zeros(p.head_b2.len()),
            scale: p.config.train_scale.then_some(0.0),
        }
    }

    /// Same names and order as [`EncoderParams::trainable_mut`].
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("adapter.w_down", self.w_down.as_slice().unwrap()),
            ("adapter.w_up", self.w_up.as_slice().unwrap()),
            ("adapter.ln.gain", self.ln_gain.as_slice().unwrap()),
            ("adapter.ln.bias", self.ln_bias.as_slice().unwrap()),
            ("head.w1", self.head_w1.as_slice().unwrap()),
            ("head.b1", self.head_b1.as_slice().unwrap()),
            ("head.w2", self.head_w2.as_slice().unwrap()),
            ("head.b2", self.head_b2.as_slice().unwrap()),
        ];
        if let Some(s) = &self.scale {
            out.push(("adapter.scale", std::slice::from_ref(s)));
        }
        out
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        self.w_down += &other.w_down;
        self.w_up += &other.w_up;
        self.ln_gain += &other.ln_gain;
        self.ln_bias += &other.ln_bias;
        self.head_w1 += &other.head_w1;
        self.head_b1 += &other.head_b1;
        self.head_w2 += &other.head_w2;
        self.head_b2 += &other.head_b2;
        if let (Some(a), Some(b)) = (&mut self.scale, other.scale) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| *v == 0.0))
    }
}

/// Intermediate activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    adapter_xhat: Array2<f64>,
    adapter_in: Array2<f64>,
    bottleneck_pre: Array2<f64>,
    bottleneck: Array2<f64>,
    adapter_out: Array2<f64>,
    block_out: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    head_norms: Array1<f64>,
    embeddings: Array2<f64>,
}

impl ForwardCache {
    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn into_embeddings(self) -> Array2<f64> {
        self.embeddings
    }

    pub fn block_out(&self) -> ArrayView2<'_, f64> {
        self.block_out.view()
    }

    /// Smallest `|pre-activation|` over both ReLU layers, i.e. how far the
    /// batch is from a point where the encoder is not differentiable.
    pub fn relu_margin(&self) -> f64 {
        self.bottleneck_pre
            .iter()
            .chain(self.hidden_pre.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn check_input(x: ArrayView2<'_, f64>, p: &EncoderParams) -> Result<()> {
    if x.ncols() != p.config.input_dim {
        return Err(Error::dims(p.config.input_dim, x.ncols(), "encoder input"));
    }
    Ok(())
}

/// Block output (frozen path + residual + scaled adapter) for a batch of rows.
pub fn adapter_forward_batch(x: ArrayView2<'_, f64>, p: &EncoderParams) -> Result<Array2<f64>> {
    check_input(x, p)?;
    let adapter_in = affine_rows(&standardize_rows(x), &p.ln_adapter);
    let bottleneck = relu(&adapter_in.dot(&p.w_down));
    let adapter_out = bottleneck.dot(&p.w_up);
    Ok(frozen_path(x, p) + x + adapter_out * p.scale)
}

pub fn adapter_forward(v: ArrayView1<'_, f64>, p: &EncoderParams) -> Result<Array1<f64>> {
    let x = v.insert_axis(Axis(0));
    Ok(adapter_forward_batch(x, p)?.row(0).to_owned())
}

fn frozen_path(x: ArrayView2<'_, f64>, p: &EncoderParams) -> Array2<f64> {
    affine_rows(&standardize_rows(x), &p.ln_frozen).dot(&p.frozen_mlp) + &p.frozen_bias
}

pub fn forward_batch(x: ArrayView2<'_, f64>, p: &EncoderParams) -> Result<ForwardCache> {
    check_input(x, p)?;
    let adapter_xhat = standardize_rows(x);
    let adapter_in = affine_rows(&adapter_xhat, &p.ln_adapter);
    let bottleneck_pre = adapter_in.dot(&p.w_down);
    let bottleneck = relu(&bottleneck_pre);
    let adapter_out = bottleneck.dot(&p.w_up);
    let block_out = frozen_path(x, p) + x + &adapter_out * p.scale;
    let hidden_pre = block_out.dot(&p.head_w1) + &p.head_b1;
    let hidden = relu(&hidden_pre);
    let mut embeddings = hidden.dot(&p.head_w2) + &p.head_b2;
    let mut head_norms = Array1::zeros(embeddings.nrows());
    for (i, mut row) in embeddings.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::DegenerateData(format!(
                "projection of row {i} has norm {n}; cannot normalise"
            )));
        }
        row /= n;
        head_norms[i] = n;
    }
    Ok(ForwardCache {
        adapter_xhat,
        adapter_in,
        bottleneck_pre,
        bottleneck,
        adapter_out,
        block_out,
        hidden_pre,
        hidden,
        head_norms,
        embeddings,
    })
}

/// Unit-norm embeddings for a batch of rows.
pub fn encode_batch(x: ArrayView2<'_, f64>, p: &EncoderParams) -> Result<Array2<f64>> {
    Ok(forward_batch(x, p)?.into_embeddings())
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Array1<f64>);

impl Embedding {
    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

pub fn encode(v: ArrayView1<'_, f64>, p: &EncoderParams) -> Result<Embedding> {
    let x = v.insert_axis(Axis(0));
    Ok(Embedding(encode_batch(x, p)?.row(0).to_owned()))
}

/// Back-propagates `upstream` (one row per embedding) to the trainable
/// parameters. Gradients are summed over rows.
pub fn backward_batch(
    cache: &ForwardCache,
    upstream: ArrayView2<'_, f64>,
    p: &EncoderParams,
) -> Result<Gradients> {
    if upstream.dim() != cache.embeddings.dim() {
        return Err(Error::dims(
            cache.embeddings.len(),
            upstream.len(),
            "upstream gradient",
        ));
    }
    if upstream.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("upstream gradient".into()));
    }

    // d/dh of h/|h| is (I - e e^T) / |h|.
    let mut g_head = upstream.to_owned();
    Zip::from(g_head.rows_mut())
        .and(cache.embeddings.rows())
        .and(&cache.head_norms)
        .for_each(|mut g, e, &n| {
            let proj = g.dot(&e);
            g.scaled_add(-proj, &e);
            g /= n;
        });

    let head_w2 = cache.hidden.t().dot(&g_head);
    let head_b2 = g_head.sum_axis(Axis(0));
    let mut g_hidden = g_head.dot(&p.head_w2.t());
    Zip::from(&mut g_hidden)
        .and(&cache.hidden_pre)
        .for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
    let head_w1 = cache.block_out.t().dot(&g_hidden);
    let head_b1 = g_hidden.sum_axis(Axis(0));
    let g_block = g_hidden.dot(&p.head_w1.t());

    let scale = p
        .config
        .train_scale
        .then(|| (&g_block * &cache.adapter_out).sum());
    let g_adapter_out = &g_block * p.scale;
    let w_up = cache.bottleneck.t().dot(&g_adapter_out);
    let mut g_bottleneck = g_adapter_out.dot(&p.w_up.t());
    Zip::from(&mut g_bottleneck)
        .and(&cache.bottleneck_pre)
        .for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
    let w_down = cache.adapter_in.t().dot(&g_bottleneck);
    let g_adapter_in = g_bottleneck.dot(&p.w_down.t());
    let ln_gain = (&g_adapter_in * &cache.adapter_xhat).sum_axis(Axis(0));
    let ln_bias = g_adapter_in.sum_axis(Axis(0));

    // Transposed products come out column-major; keep every tensor row-major.
    let standard = |a: Array2<f64>| a.as_standard_layout().into_owned();
    Ok(Gradients {
        w_down: standard(w_down),
        w_up: standard(w_up),
        ln_gain,
        ln_bias,
        head_w1: standard(head_w1),
        head_b1,
        head_w2: standard(head_w2),
        head_b2,
        scale,
    })
}

pub fn encode_backward(
    v: ArrayView1<'_, f64>,
    p: &EncoderParams,
    upstream: ArrayView1<'_, f64>,
) -> Result<Gradients> {
    if upstream.len() != p.config.embed_dim {
        return Err(Error::dims(p.config.embed_dim, upstream.len(), "upstream gradient"));
    }
    let cache = forward_batch(v.insert_axis(Axis(0)), p)?;
    backward_batch(&cache, upstream.insert_axis(Axis(0)), p)
}
