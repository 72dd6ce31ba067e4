//! Multi-layer bidirectional transformer encoder in double precision.
//!
//! Each block is post-layer-norm:
//!
//! ```text
//! h = LN(x + Dropout(MultiHeadAttention(x)))
//! y = LN(h + Dropout(W2 gelu(W1 h + b1) + b2))
//! ```
//!
//! Inputs are the sum of learned token, absolute position and segment
//! embeddings. Keys with attention mask 0 are excluded from every softmax,
//! so their probability is exactly zero. GELU is the exact erf form.
//!
//! The forward pass can record a [`ForwardCache`] from which [`backward`]
//! accumulates parameter gradients.

use ndarray::{s, Array1, Array2, Axis, Dimension};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::NUM_SPECIALS;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;

/// Shape of an encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub max_position: usize,
    pub vocab_size: usize,
    pub num_segments: usize,
    pub dropout_rate: f64,
}

pub const PRESETS: [&str; 3] = ["bert_base_like", "ernie_tiny_like", "toy"];

impl EncoderConfig {
    /// Config with `ffn_size = 4 * hidden_size`, two segments, no dropout.
    pub fn new(num_layers: usize, hidden_size: usize, num_heads: usize, vocab_size: usize, max_position: usize) -> Self {
        Self {
            num_layers,
            hidden_size,
            num_heads,
            ffn_size: 4 * hidden_size,
            max_position,
            vocab_size,
            num_segments: 2,
            dropout_rate: 0.0,
        }
    }

    /// Named shapes: `bert_base_like` (12 layers, 768 hidden, 12 heads),
    /// `ernie_tiny_like` (3 layers, 1024 hidden, 16 heads) and `toy`
    /// (2 layers, 32 hidden, 2 heads). Vocabulary size is a placeholder
    /// meant to be replaced with [`EncoderConfig::with_vocab_size`].
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "bert_base_like" => Ok(Self::new(12, 768, 12, 21128, 512)),
            "ernie_tiny_like" => Ok(Self::new(3, 1024, 16, 21128, 512)),
            "toy" => Ok(Self::new(2, 32, 2, 64, 128)),
            _ => Err(Error::UnknownPreset {
                name: name.to_string(),
                valid: PRESETS.join(", "),
            }),
        }
    }

    pub fn with_vocab_size(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden_size == 0 {
            return bad("num_layers, num_heads and hidden_size must be >= 1".into());
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_size {} not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.ffn_size < self.hidden_size {
            return bad(format!("ffn_size {} < hidden_size {}", self.ffn_size, self.hidden_size));
        }
        if self.vocab_size <= NUM_SPECIALS {
            return bad(format!("vocab_size {} leaves no room for ordinary tokens", self.vocab_size));
        }
        if self.max_position < 2 || self.num_segments == 0 {
            return bad("max_position must be >= 2 and num_segments >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        let h = self.hidden_size;
        let f = self.ffn_size;
        let emb = (self.vocab_size + self.max_position + self.num_segments) * h;
        let layer = 4 * (h * h + h) + 2 * (2 * h) + (h * f + f) + (f * h + h);
        emb + self.num_layers * layer
    }
}

/// Weights of one transformer block. Matrices multiply from the right:
/// `x (T x H) . W (H x out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub query_w: Array2<f64>,
    pub query_b: Array1<f64>,
    pub key_w: Array2<f64>,
    pub key_b: Array1<f64>,
    pub value_w: Array2<f64>,
    pub value_b: Array1<f64>,
    pub attn_out_w: Array2<f64>,
    pub attn_out_b: Array1<f64>,
    pub attn_norm_g: Array1<f64>,
    pub attn_norm_b: Array1<f64>,
    pub ffn_in_w: Array2<f64>,
    pub ffn_in_b: Array1<f64>,
    pub ffn_out_w: Array2<f64>,
    pub ffn_out_b: Array1<f64>,
    pub ffn_norm_g: Array1<f64>,
    pub ffn_norm_b: Array1<f64>,
}

pub(crate) fn flat<D: Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

pub(crate) fn flat_mut<D: Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are kept in standard layout")
}

/// A named parameter tensor: name, shape, row-major data.
pub type TensorRef<'a> = (String, Vec<usize>, &'a [f64]);

macro_rules! layer_fields {
    ($m:ident, $self:ident, $f:ident) => {
        $m!($self, $f, query_w, "attention.query.weight");
        $m!($self, $f, query_b, "attention.query.bias");
        $m!($self, $f, key_w, "attention.key.weight");
        $m!($self, $f, key_b, "attention.key.bias");
        $m!($self, $f, value_w, "attention.value.weight");
        $m!($self, $f, value_b, "attention.value.bias");
        $m!($self, $f, attn_out_w, "attention.output.weight");
        $m!($self, $f, attn_out_b, "attention.output.bias");
        $m!($self, $f, attn_norm_g, "attention.norm.gain");
        $m!($self, $f, attn_norm_b, "attention.norm.bias");
        $m!($self, $f, ffn_in_w, "ffn.in.weight");
        $m!($self, $f, ffn_in_b, "ffn.in.bias");
        $m!($self, $f, ffn_out_w, "ffn.out.weight");
        $m!($self, $f, ffn_out_b, "ffn.out.bias");
        $m!($self, $f, ffn_norm_g, "ffn.norm.gain");
        $m!($self, $f, ffn_norm_b, "ffn.norm.bias");
    };
}

macro_rules! push_ref {
    ($self:ident, $f:ident, $field:ident, $name:expr) => {
        $f($name, $self.$field.shape().to_vec(), flat(&$self.$field));
    };
}

macro_rules! push_mut {
    ($self:ident, $f:ident, $field:ident, $name:expr) => {
        $f(flat_mut(&mut $self.$field));
    };
}

impl LayerParams {
    fn zeros(h: usize, f: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        Self {
            query_w: m(h, h),
            query_b: v(h),
            key_w: m(h, h),
            key_b: v(h),
            value_w: m(h, h),
            value_b: v(h),
            attn_out_w: m(h, h),
            attn_out_b: v(h),
            attn_norm_g: v(h),
            attn_norm_b: v(h),
            ffn_in_w: m(h, f),
            ffn_in_b: v(f),
            ffn_out_w: m(f, h),
            ffn_out_b: v(h),
            ffn_norm_g: v(h),
            ffn_norm_b: v(h),
        }
    }

    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'static str, Vec<usize>, &'a [f64])) {
        layer_fields!(push_ref, self, f);
    }

    fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut [f64])) {
        layer_fields!(push_mut, self, f);
    }
}

/// All learnable encoder weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub segment_embeddings: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// All-zero parameters (also the gradient accumulator shape).
    pub fn zeros(config: &EncoderConfig) -> Self {
        let h = config.hidden_size;
        Self {
            config: config.clone(),
            token_embeddings: Array2::zeros((config.vocab_size, h)),
            position_embeddings: Array2::zeros((config.max_position, h)),
            segment_embeddings: Array2::zeros((config.num_segments, h)),
            layers: (0..config.num_layers)
                .map(|_| LayerParams::zeros(h, config.ffn_size))
                .collect(),
        }
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out: Vec<TensorRef<'_>> = vec![
            ("token_embeddings".into(), self.token_embeddings.shape().to_vec(), flat(&self.token_embeddings)),
            ("position_embeddings".into(), self.position_embeddings.shape().to_vec(), flat(&self.position_embeddings)),
            ("segment_embeddings".into(), self.segment_embeddings.shape().to_vec(), flat(&self.segment_embeddings)),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            layer.for_each(&mut |name, shape, data| out.push((format!("layer.{i}.{name}"), shape, data)));
        }
        out
    }

    /// Mutable views in the same order as [`EncoderParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            flat_mut(&mut self.token_embeddings),
            flat_mut(&mut self.position_embeddings),
            flat_mut(&mut self.segment_embeddings),
        ];
        for layer in &mut self.layers {
            layer.for_each_mut(&mut |d| out.push(d));
        }
        out
    }
}

/// Truncated-normal (std 0.02, cut at two std) weights, zero biases, unit
/// layer-norm gains. Deterministic in `seed`.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = rng::named(seed, "init.encoder");
    let mut p = EncoderParams::zeros(config);
    let fill = |a: &mut [f64], rng: &mut Rng| {
        for x in a {
            *x = rng::truncated_normal(rng, INIT_STD);
        }
    };
    fill(flat_mut(&mut p.token_embeddings), &mut rng);
    fill(flat_mut(&mut p.position_embeddings), &mut rng);
    fill(flat_mut(&mut p.segment_embeddings), &mut rng);
    for l in &mut p.layers {
        for w in [&mut l.query_w, &mut l.key_w, &mut l.value_w, &mut l.attn_out_w, &mut l.ffn_in_w, &mut l.ffn_out_w] {
            fill(flat_mut(w), &mut rng);
        }
        l.attn_norm_g.fill(1.0);
        l.ffn_norm_g.fill(1.0);
    }
    Ok(p)
}

/// One model input: token ids, segment ids, attention mask.
#[derive(Clone, Copy, Debug)]
pub struct Input<'a> {
    pub ids: &'a [usize],
    pub segments: &'a [usize],
    pub mask: &'a [bool],
}

impl<'a> Input<'a> {
    pub fn new(ids: &'a [usize], segments: &'a [usize], mask: &'a [bool]) -> Self {
        Self { ids, segments, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn check(&self, config: &EncoderConfig) -> Result<()> {
        let n = self.ids.len();
        if self.segments.len() != n || self.mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "ids {n}, segments {}, mask {}",
                self.segments.len(),
                self.mask.len()
            )));
        }
        if n > config.max_position {
            return Err(Error::LengthOverflow {
                len: n,
                max: config.max_position,
            });
        }
        if let Some(&id) = self.ids.iter().find(|&&i| i >= config.vocab_size) {
            return Err(Error::IndexOutOfRange {
                what: "token id",
                index: id,
                bound: config.vocab_size,
            });
        }
        if let Some(&sg) = self.segments.iter().find(|&&s| s >= config.num_segments) {
            return Err(Error::IndexOutOfRange {
                what: "segment id",
                index: sg,
                bound: config.num_segments,
            });
        }
        Ok(())
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Layer norm over rows; returns (output, normalized input, 1/std per row).
fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * gain + bias;
    (y, xhat, rstd)
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    rstd: &Array1<f64>,
    gain: &Array1<f64>,
    d_gain: &mut Array1<f64>,
    d_bias: &mut Array1<f64>,
) -> Array2<f64> {
    *d_gain += &(dy * xhat).sum_axis(Axis(0));
    *d_bias += &dy.sum_axis(Axis(0));
    let n = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(rstd.iter()) {
        let mean_d = row.sum() / n;
        let mean_dx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        for (d, &x) in row.iter_mut().zip(xh.iter()) {
            *d = r * (*d - mean_d - x * mean_dx);
        }
    }
    dx
}

fn dropout_mask(rng: &mut Rng, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

/// Row-wise softmax over the keys allowed by `mask`; masked keys get 0.
fn masked_softmax(scores: &mut Array2<f64>, mask: &[bool]) {
    for mut row in scores.rows_mut() {
        let m = row
            .iter()
            .zip(mask)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut z = 0.0;
        for (v, &k) in row.iter_mut().zip(mask) {
            if k {
                *v = (*v - m).exp();
                z += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / z);
    }
}

/// Intermediate values of one block, kept for the backward pass.
#[derive(Clone, Debug)]
struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    attn_drop: Option<Array2<f64>>,
    attn_xhat: Array2<f64>,
    attn_rstd: Array1<f64>,
    attn_norm_out: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_act: Array2<f64>,
    ffn_drop: Option<Array2<f64>>,
    ffn_xhat: Array2<f64>,
    ffn_rstd: Array1<f64>,
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    ids: Vec<usize>,
    segments: Vec<usize>,
    embed_drop: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Attention probabilities of (`layer`, `head`).
    pub fn attention(&self, layer: usize, head: usize) -> Option<&Array2<f64>> {
        self.layers.get(layer).and_then(|l| l.probs.get(head))
    }
}

fn layer_forward(
    p: &LayerParams,
    cfg: &EncoderConfig,
    x: Array2<f64>,
    mask: &[bool],
    mut dropout: Option<&mut Rng>,
) -> (Array2<f64>, LayerCache) {
    let t = x.nrows();
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let q = x.dot(&p.query_w) + &p.query_b;
    let k = x.dot(&p.key_w) + &p.key_b;
    let v = x.dot(&p.value_w) + &p.value_b;
    let mut context = Array2::zeros((t, cfg.hidden_size));
    let mut probs = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let cols = s![.., h * d..(h + 1) * d];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        masked_softmax(&mut scores, mask);
        context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let mut attn = context.dot(&p.attn_out_w) + &p.attn_out_b;
    let rate = cfg.dropout_rate;
    let attn_drop = dropout.as_deref_mut().filter(|_| rate > 0.0).map(|r| {
        let m = dropout_mask(r, t, cfg.hidden_size, rate);
        attn *= &m;
        m
    });
    let (h1, attn_xhat, attn_rstd) = layer_norm(&(&x + &attn), &p.attn_norm_g, &p.attn_norm_b);
    let ffn_pre = h1.dot(&p.ffn_in_w) + &p.ffn_in_b;
    let ffn_act = ffn_pre.mapv(gelu);
    let mut ffn = ffn_act.dot(&p.ffn_out_w) + &p.ffn_out_b;
    let ffn_drop = dropout.filter(|_| rate > 0.0).map(|r| {
        let m = dropout_mask(r, t, cfg.hidden_size, rate);
        ffn *= &m;
        m
    });
    let (out, ffn_xhat, ffn_rstd) = layer_norm(&(&h1 + &ffn), &p.ffn_norm_g, &p.ffn_norm_b);
    let cache = LayerCache {
        input: x,
        q,
        k,
        v,
        probs,
        context,
        attn_drop,
        attn_xhat,
        attn_rstd,
        attn_norm_out: h1,
        ffn_pre,
        ffn_act,
        ffn_drop,
        ffn_xhat,
        ffn_rstd,
    };
    (out, cache)
}

fn layer_backward(p: &LayerParams, g: &mut LayerParams, cfg: &EncoderConfig, c: &LayerCache, d_out: &Array2<f64>) -> Array2<f64> {
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();

    let d_r2 = layer_norm_backward(d_out, &c.ffn_xhat, &c.ffn_rstd, &p.ffn_norm_g, &mut g.ffn_norm_g, &mut g.ffn_norm_b);
    let mut d_h1 = d_r2.clone();
    let mut d_ffn = d_r2;
    if let Some(m) = &c.ffn_drop {
        d_ffn *= m;
    }
    g.ffn_out_w += &c.ffn_act.t().dot(&d_ffn);
    g.ffn_out_b += &d_ffn.sum_axis(Axis(0));
    let mut d_pre = d_ffn.dot(&p.ffn_out_w.t());
    d_pre.zip_mut_with(&c.ffn_pre, |dg, &x| *dg *= gelu_grad(x));
    g.ffn_in_w += &c.attn_norm_out.t().dot(&d_pre);
    g.ffn_in_b += &d_pre.sum_axis(Axis(0));
    d_h1 += &d_pre.dot(&p.ffn_in_w.t());

    let d_r1 = layer_norm_backward(&d_h1, &c.attn_xhat, &c.attn_rstd, &p.attn_norm_g, &mut g.attn_norm_g, &mut g.attn_norm_b);
    let mut d_x = d_r1.clone();
    let mut d_attn = d_r1;
    if let Some(m) = &c.attn_drop {
        d_attn *= m;
    }
    g.attn_out_w += &c.context.t().dot(&d_attn);
    g.attn_out_b += &d_attn.sum_axis(Axis(0));
    let d_ctx = d_attn.dot(&p.attn_out_w.t());

    let mut d_q = Array2::zeros(c.q.raw_dim());
    let mut d_k = Array2::zeros(c.k.raw_dim());
    let mut d_v = Array2::zeros(c.v.raw_dim());
    for h in 0..cfg.num_heads {
        let cols = s![.., h * d..(h + 1) * d];
        let probs = &c.probs[h];
        let d_ctx_h = d_ctx.slice(cols);
        let d_probs = d_ctx_h.dot(&c.v.slice(cols).t());
        d_v.slice_mut(cols).assign(&probs.t().dot(&d_ctx_h));
        let mut d_scores = probs * &d_probs;
        for (mut row, pr) in d_scores.rows_mut().into_iter().zip(probs.rows()) {
            let dot = row.sum();
            for (ds, &pv) in row.iter_mut().zip(pr.iter()) {
                *ds -= pv * dot;
            }
        }
        d_scores *= scale;
        d_q.slice_mut(cols).assign(&d_scores.dot(&c.k.slice(cols)));
        d_k.slice_mut(cols).assign(&d_scores.t().dot(&c.q.slice(cols)));
    }
    for (dw, db, dz, w) in [
        (&mut g.query_w, &mut g.query_b, &d_q, &p.query_w),
        (&mut g.key_w, &mut g.key_b, &d_k, &p.key_w),
        (&mut g.value_w, &mut g.value_b, &d_v, &p.value_w),
    ] {
        *dw += &c.input.t().dot(dz);
        *db += &dz.sum_axis(Axis(0));
        d_x += &dz.dot(&w.t());
    }
    d_x
}

/// Forward pass. Dropout is applied only when `dropout` carries a generator
/// and the configured rate is positive.
pub fn forward(params: &EncoderParams, input: Input<'_>, mut dropout: Option<&mut Rng>) -> Result<(Array2<f64>, ForwardCache)> {
    let cfg = &params.config;
    input.check(cfg)?;
    let t = input.len();
    let mut x = Array2::zeros((t, cfg.hidden_size));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        row.assign(&params.token_embeddings.row(input.ids[i]));
        row += &params.position_embeddings.row(i);
        row += &params.segment_embeddings.row(input.segments[i]);
    }
    let embed_drop = dropout.as_deref_mut().filter(|_| cfg.dropout_rate > 0.0).map(|r| {
        let m = dropout_mask(r, t, cfg.hidden_size, cfg.dropout_rate);
        x *= &m;
        m
    });
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for layer in &params.layers {
        let (out, cache) = layer_forward(layer, cfg, x, input.mask, dropout.as_deref_mut());
        layers.push(cache);
        x = out;
    }
    let cache = ForwardCache {
        ids: input.ids.to_vec(),
        segments: input.segments.to_vec(),
        embed_drop,
        layers,
    };
    Ok((x, cache))
}

/// Accumulate into `grads` the gradient of a scalar loss whose derivative
/// with respect to the encoder output is `d_out`.
pub fn backward(params: &EncoderParams, cache: &ForwardCache, d_out: &Array2<f64>, grads: &mut EncoderParams) {
    let cfg = &params.config;
    let mut d = d_out.clone();
    for (i, layer) in params.layers.iter().enumerate().rev() {
        d = layer_backward(layer, &mut grads.layers[i], cfg, &cache.layers[i], &d);
    }
    if let Some(m) = &cache.embed_drop {
        d *= m;
    }
    for (i, row) in d.rows().into_iter().enumerate() {
        let mut tok = grads.token_embeddings.row_mut(cache.ids[i]);
        tok += &row;
        let mut pos = grads.position_embeddings.row_mut(i);
        pos += &row;
        let mut seg = grads.segment_embeddings.row_mut(cache.segments[i]);
        seg += &row;
    }
}

/// Hidden states (T x H) in inference mode.
pub fn encode(params: &EncoderParams, ids: &[usize], segments: &[usize], mask: &[bool]) -> Result<Array2<f64>> {
    forward(params, Input::new(ids, segments, mask), None).map(|(h, _)| h)
}

/// Attention probabilities (T x T) of one head in one layer, inference mode.
pub fn attention_probs(
    params: &EncoderParams,
    ids: &[usize],
    segments: &[usize],
    mask: &[bool],
    layer: usize,
    head: usize,
) -> Result<Array2<f64>> {
    let cfg = &params.config;
    if layer >= cfg.num_layers {
        return Err(Error::IndexOutOfRange {
            what: "layer",
            index: layer,
            bound: cfg.num_layers,
        });
    }
    if head >= cfg.num_heads {
        return Err(Error::IndexOutOfRange {
            what: "head",
            index: head,
            bound: cfg.num_heads,
        });
    }
    let (_, cache) = forward(params, Input::new(ids, segments, mask), None)?;
    Ok(cache.layers[layer].probs[head].clone())
}
