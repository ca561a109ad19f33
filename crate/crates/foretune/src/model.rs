//! Desk-scale forecasters with hand-derived gradients.
//!
//! Three variants share one parameter representation (a flat `Vec<f64>`
//! described by a [`Layout`]), which keeps the optimizer, snapshotting and
//! finite-difference testing generic:
//!
//! * `linear` — one affine map seq_len→pred_len shared by every channel.
//! * `mixer` — channel embedding, then blocks of (time-mixing affine +
//!   channel MLP) with residuals and dropout, mean-pool, affine head.
//! * `attention_lite` — like `mixer` but the first sublayer is multi-head
//!   scaled dot-product attention whose keys/values are average-pooled
//!   along time with kernel = stride = `factor`.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TaskDims, WindowSet};
use crate::error::{Error, Result};
use crate::exec;
use crate::hyperspace::ParamConfig;

/// Windows per gradient-accumulation chunk. Chunks are summed in index
/// order, so batch gradients are bit-identical at any thread count.
pub const GRAD_CHUNK: usize = 8;
/// Windows per evaluation chunk; same ordering guarantee.
pub const EVAL_CHUNK: usize = 64;

/// Dropout probability applied inside mixer/attention blocks. Fixed rather
/// than searched; the tuned parameters are the nine ladder values.
pub const DROPOUT_P: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Linear,
    Mixer,
    AttentionLite,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] =
        [ModelVariant::Linear, ModelVariant::Mixer, ModelVariant::AttentionLite];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Linear => "linear",
            ModelVariant::Mixer => "mixer",
            ModelVariant::AttentionLite => "attention_lite",
        }
    }

    /// Tuned parameters this variant does not consume. They stay in the
    /// search space deliberately — the tuning pipeline treats every model
    /// uniformly — and are listed in the experiment manifest.
    pub fn ignored_params(self) -> &'static [&'static str] {
        match self {
            ModelVariant::Linear => {
                &["d_ff", "d_layers", "d_model", "e_layers", "factor", "n_heads"]
            }
            ModelVariant::Mixer => &["factor", "n_heads"],
            ModelVariant::AttentionLite => &[],
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelVariant::Linear),
            "mixer" => Ok(ModelVariant::Mixer),
            "attention_lite" => Ok(ModelVariant::AttentionLite),
            other => Err(Error::InvalidConfig(format!(
                "unknown model variant `{other}` (expect linear, mixer or attention_lite)"
            ))),
        }
    }
}

/// One trial's resolved hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HParams {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub e_layers: usize,
    pub d_layers: usize,
    pub factor: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_epochs: usize,
    pub dropout: f64,
}

/// Extract hyperparameters from a search-space configuration.
pub fn hparams_from_config(cfg: &ParamConfig) -> Result<HParams> {
    let dim = |name: &str| -> Result<usize> {
        cfg.get(name)
            .ok_or_else(|| Error::Model(format!("configuration lacks `{name}`")))?
            .as_usize()
            .ok_or_else(|| Error::Model(format!("`{name}` must be a non-negative integer")))
    };
    let lr = cfg
        .get("learning_rate")
        .ok_or_else(|| Error::Model("configuration lacks `learning_rate`".into()))?
        .as_f64();
    Ok(HParams {
        d_model: dim("d_model")?,
        d_ff: dim("d_ff")?,
        n_heads: dim("n_heads")?,
        e_layers: dim("e_layers")?,
        d_layers: dim("d_layers")?,
        factor: dim("factor")?,
        batch_size: dim("batch_size")?,
        learning_rate: lr,
        train_epochs: dim("train_epochs")?,
        dropout: DROPOUT_P,
    })
}

/// One tensor's place inside the flat parameter vector. Biases are stored
/// as single-column matrices.
#[derive(Clone, Debug)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Fan-in of the layer this tensor belongs to; sets the init range.
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter map of a model.
#[derive(Clone, Debug)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    fn add(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> usize {
        let spec = TensorSpec { name, rows, cols, offset: self.total, fan_in };
        self.total += spec.len();
        self.tensors.push(spec);
        self.tensors.len() - 1
    }

    pub fn by_name(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Tensor indices per structural role, so forward/backward never search by
/// name.
#[derive(Clone, Debug, Default)]
struct Ix {
    // linear
    head_w: usize,
    head_b: usize,
    // mixer / attention
    embed_w: usize,
    embed_b: usize,
    blocks: Vec<BlockIx>,
    hidden: Vec<(usize, usize)>, // (w, b) per hidden head layer
    out_w: usize,
    out_b: usize,
}

#[derive(Clone, Copy, Debug)]
struct BlockIx {
    // mixer time mixing
    time_w: usize,
    time_b: usize,
    // attention projections (unused by mixer)
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    // channel MLP
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
}

fn build_layout(variant: ModelVariant, hp: &HParams, dims: &TaskDims) -> (Layout, Ix) {
    let mut l = Layout { tensors: Vec::new(), total: 0 };
    let mut ix = Ix::default();
    let (seq, pred, c_in, c_out) = (dims.seq_len, dims.pred_len, dims.c_in, dims.c_out);
    match variant {
        ModelVariant::Linear => {
            ix.head_w = l.add("head.w".into(), pred, seq, seq);
            ix.head_b = l.add("head.b".into(), pred, 1, seq);
        }
        ModelVariant::Mixer | ModelVariant::AttentionLite => {
            let d = hp.d_model;
            ix.embed_w = l.add("embed.w".into(), d, c_in, c_in);
            ix.embed_b = l.add("embed.b".into(), d, 1, c_in);
            for k in 0..hp.e_layers {
                let mut b = BlockIx {
                    time_w: 0,
                    time_b: 0,
                    wq: 0,
                    bq: 0,
                    wk: 0,
                    bk: 0,
                    wv: 0,
                    bv: 0,
                    wo: 0,
                    bo: 0,
                    ff1_w: 0,
                    ff1_b: 0,
                    ff2_w: 0,
                    ff2_b: 0,
                };
                match variant {
                    ModelVariant::Mixer => {
                        b.time_w = l.add(format!("blk{k}.time.w"), seq, seq, seq);
                        b.time_b = l.add(format!("blk{k}.time.b"), seq, 1, seq);
                    }
                    _ => {
                        b.wq = l.add(format!("blk{k}.attn.wq"), d, d, d);
                        b.bq = l.add(format!("blk{k}.attn.bq"), d, 1, d);
                        b.wk = l.add(format!("blk{k}.attn.wk"), d, d, d);
                        b.bk = l.add(format!("blk{k}.attn.bk"), d, 1, d);
                        b.wv = l.add(format!("blk{k}.attn.wv"), d, d, d);
                        b.bv = l.add(format!("blk{k}.attn.bv"), d, 1, d);
                        b.wo = l.add(format!("blk{k}.attn.wo"), d, d, d);
                        b.bo = l.add(format!("blk{k}.attn.bo"), d, 1, d);
                    }
                }
                b.ff1_w = l.add(format!("blk{k}.ff1.w"), hp.d_ff, d, d);
                b.ff1_b = l.add(format!("blk{k}.ff1.b"), hp.d_ff, 1, d);
                b.ff2_w = l.add(format!("blk{k}.ff2.w"), d, hp.d_ff, hp.d_ff);
                b.ff2_b = l.add(format!("blk{k}.ff2.b"), d, 1, hp.d_ff);
                ix.blocks.push(b);
            }
            for j in 0..hp.d_layers.saturating_sub(1) {
                let w = l.add(format!("head{j}.w"), d, d, d);
                let bb = l.add(format!("head{j}.b"), d, 1, d);
                ix.hidden.push((w, bb));
            }
            ix.out_w = l.add("out.w".into(), pred * c_out, d, d);
            ix.out_b = l.add("out.b".into(), pred * c_out, 1, d);
        }
    }
    (l, ix)
}

/// Parameter count by variant without building a model.
pub fn param_count(variant: ModelVariant, hp: &HParams, dims: &TaskDims) -> usize {
    build_layout(variant, hp, dims).0.total
}

/// Predicted training footprint in bytes: parameters, two optimizer moment
/// buffers, and the activation working set. Exact integer arithmetic so the
/// out-of-memory gate is reproducible.
pub fn estimate_memory(variant: ModelVariant, hp: &HParams, dims: &TaskDims) -> u64 {
    let p = param_count(variant, hp, dims) as u64;
    let b = hp.batch_size as u64;
    let seq = dims.seq_len as u64;
    let act = match variant {
        ModelVariant::Linear => b * seq,
        ModelVariant::Mixer => {
            let d = hp.d_model as u64;
            let e = hp.e_layers as u64;
            b * seq * d * (e + 1) + b * seq * hp.d_ff as u64
        }
        ModelVariant::AttentionLite => {
            let d = hp.d_model as u64;
            let e = hp.e_layers as u64;
            let pooled = seq.div_ceil(hp.factor as u64);
            b * seq * d * (e + 1)
                + b * hp.n_heads as u64 * seq * pooled
                + b * seq * hp.d_ff as u64
        }
    };
    4 * (3 * p + act)
}

/// A built model: flat parameters plus the layout describing them.
#[derive(Clone, Debug)]
pub struct Model {
    pub variant: ModelVariant,
    pub hp: HParams,
    pub dims: TaskDims,
    layout: Layout,
    ix: Ix,
    pub params: Vec<f64>,
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Dropout mask count per window.
    pub fn dropout_sites(&self) -> usize {
        match self.variant {
            ModelVariant::Linear => 0,
            _ => 2 * self.hp.e_layers,
        }
    }
}

/// Build and initialize a model. Weights and biases draw uniformly from
/// ±1/√fan_in in layout order, so a seed pins every initial parameter.
pub fn build_model(
    variant: ModelVariant,
    hp: &HParams,
    dims: &TaskDims,
    seed: u64,
) -> Result<Model> {
    if dims.seq_len == 0 || dims.pred_len == 0 || dims.c_in == 0 || dims.c_out == 0 {
        return Err(Error::Model("task dimensions must all be positive".into()));
    }
    if dims.out_in.len() != dims.c_out || dims.out_in.iter().any(|&p| p >= dims.c_in) {
        return Err(Error::Model("output→input channel map inconsistent with dims".into()));
    }
    if variant == ModelVariant::AttentionLite && !hp.d_model.is_multiple_of(hp.n_heads) {
        return Err(Error::Model(format!(
            "d_model {} not divisible by n_heads {}",
            hp.d_model, hp.n_heads
        )));
    }
    let (layout, ix) = build_layout(variant, hp, dims);
    let mut params = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in &layout.tensors {
        let bound = 1.0 / (t.fan_in as f64).sqrt();
        for v in &mut params[t.offset..t.offset + t.len()] {
            *v = rng.gen_range(-bound..bound);
        }
    }
    Ok(Model { variant, hp: hp.clone(), dims: dims.clone(), layout, ix, params })
}

/// Per-window dropout masks, one seq_len × d_model matrix per site, with
/// inverted-dropout scaling (0 or 1/(1-p)).
#[derive(Clone, Debug)]
pub struct WindowMasks {
    pub sites: Vec<Array2<f64>>,
}

/// Draw masks for one window from `rng` in a fixed order.
pub fn draw_masks<R: Rng>(model: &Model, rng: &mut R) -> WindowMasks {
    let n = model.dropout_sites();
    let p = model.hp.dropout;
    let shape = (model.dims.seq_len, model.hp.d_model);
    let sites = (0..n)
        .map(|_| {
            if p <= 0.0 {
                Array2::ones(shape)
            } else {
                let keep = 1.0 / (1.0 - p);
                Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            }
        })
        .collect();
    WindowMasks { sites }
}

// ---------------------------------------------------------------------------
// shared math helpers

fn mat<'a>(p: &'a [f64], t: &TensorSpec) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((t.rows, t.cols), &p[t.offset..t.offset + t.len()])
        .expect("layout shape")
}

fn bias<'a>(p: &'a [f64], t: &TensorSpec) -> &'a [f64] {
    &p[t.offset..t.offset + t.len()]
}

/// x·wᵀ with bias broadcast over rows: (n × k)·(m × k)ᵀ + b → n × m.
fn affine(x: &Array2<f64>, w: ArrayView2<f64>, b: &[f64]) -> Array2<f64> {
    let mut out = x.dot(&w.t());
    for mut row in out.rows_mut() {
        for (o, bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
    out
}

fn add_mat(grads: &mut [f64], t: &TensorSpec, delta: &Array2<f64>) {
    let dst = &mut grads[t.offset..t.offset + t.len()];
    for (d, v) in dst.iter_mut().zip(delta.iter()) {
        *d += v;
    }
}

fn add_bias_rowsum(grads: &mut [f64], t: &TensorSpec, g: &Array2<f64>) {
    let dst = &mut grads[t.offset..t.offset + t.len()];
    for row in g.rows() {
        for (d, v) in dst.iter_mut().zip(row.iter()) {
            *d += v;
        }
    }
}

fn add_vec(grads: &mut [f64], t: &TensorSpec, g: &Array1<f64>) {
    let dst = &mut grads[t.offset..t.offset + t.len()];
    for (d, v) in dst.iter_mut().zip(g.iter()) {
        *d += v;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn gelu_arr(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(gelu)
}

/// Row-wise stable softmax, in place.
fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Average-pool rows with kernel = stride = `factor`; the last bucket may
/// be narrower.
fn avg_pool_time(h: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (seq, d) = h.dim();
    let lk = seq.div_ceil(factor);
    let mut out = Array2::zeros((lk, d));
    for i in 0..lk {
        let lo = i * factor;
        let hi = ((i + 1) * factor).min(seq);
        let width = (hi - lo) as f64;
        for r in lo..hi {
            for j in 0..d {
                out[[i, j]] += h[[r, j]];
            }
        }
        for j in 0..d {
            out[[i, j]] /= width;
        }
    }
    out
}

fn avg_pool_time_backward(g_p: &Array2<f64>, factor: usize, seq: usize) -> Array2<f64> {
    let (lk, d) = g_p.dim();
    let mut g_h = Array2::zeros((seq, d));
    for i in 0..lk {
        let lo = i * factor;
        let hi = ((i + 1) * factor).min(seq);
        let width = (hi - lo) as f64;
        for r in lo..hi {
            for j in 0..d {
                g_h[[r, j]] += g_p[[i, j]] / width;
            }
        }
    }
    g_h
}

// ---------------------------------------------------------------------------
// per-window forward with cache

struct AttnCache {
    p: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Vec<Array2<f64>>, // per-head attention matrices, seq × Lk
    o: Array2<f64>,      // concatenated head outputs, seq × d
}

struct BlockCache {
    h_in: Array2<f64>,
    attn: Option<AttnCache>,
    h_mid: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
}

struct Cache {
    x: Array2<f64>,
    blocks: Vec<BlockCache>,
    pooled: Array1<f64>,
    /// Head-layer inputs: pooled vector, then each hidden activation.
    head_inputs: Vec<Array1<f64>>,
    /// Hidden-layer pre-activations.
    head_pre: Vec<Array1<f64>>,
}

impl Cache {
    fn empty(x: Array2<f64>) -> Cache {
        Cache {
            x,
            blocks: Vec::new(),
            pooled: Array1::zeros(0),
            head_inputs: Vec::new(),
            head_pre: Vec::new(),
        }
    }
}

fn check_input_shape(model: &Model, x: &Array2<f64>) -> Result<()> {
    let want = (model.dims.seq_len, model.dims.c_in);
    if x.dim() != want {
        return Err(Error::Model(format!(
            "input window shape {:?} does not match expected {:?}",
            x.dim(),
            want
        )));
    }
    Ok(())
}

fn forward_window(model: &Model, x: &Array2<f64>, masks: Option<&WindowMasks>) -> (Array2<f64>, Cache) {
    let p = &model.params;
    let l = &model.layout;
    let ix = &model.ix;
    let dims = &model.dims;
    match model.variant {
        ModelVariant::Linear => {
            let w = mat(p, &l.tensors[ix.head_w]);
            let b = bias(p, &l.tensors[ix.head_b]);
            let mut y = Array2::zeros((dims.pred_len, dims.c_out));
            for (j, &src) in dims.out_in.iter().enumerate() {
                let col = x.column(src);
                let yj = w.dot(&col);
                for (i, v) in yj.iter().enumerate() {
                    y[[i, j]] = v + b[i];
                }
            }
            (y, Cache::empty(x.clone()))
        }
        ModelVariant::Mixer | ModelVariant::AttentionLite => {
            let d = model.hp.d_model;
            let mut cache = Cache::empty(x.clone());
            let mut h = affine(
                x,
                mat(p, &l.tensors[ix.embed_w]),
                bias(p, &l.tensors[ix.embed_b]),
            );
            for (k, blk) in ix.blocks.iter().enumerate() {
                let h_in = h.clone();
                let mask1 = masks.map(|m| &m.sites[2 * k]);
                let mask2 = masks.map(|m| &m.sites[2 * k + 1]);
                let (sub1, attn_cache) = match model.variant {
                    ModelVariant::Mixer => {
                        let t = mat(p, &l.tensors[blk.time_w]);
                        let tb = bias(p, &l.tensors[blk.time_b]);
                        let mut u = t.dot(&h_in);
                        for (mut row, bv) in u.rows_mut().into_iter().zip(tb) {
                            for v in row.iter_mut() {
                                *v += bv;
                            }
                        }
                        (u, None)
                    }
                    _ => {
                        let pool = avg_pool_time(&h_in, model.hp.factor);
                        let q = affine(&h_in, mat(p, &l.tensors[blk.wq]), bias(p, &l.tensors[blk.bq]));
                        let kk = affine(&pool, mat(p, &l.tensors[blk.wk]), bias(p, &l.tensors[blk.bk]));
                        let v = affine(&pool, mat(p, &l.tensors[blk.wv]), bias(p, &l.tensors[blk.bv]));
                        let nh = model.hp.n_heads;
                        let hd = d / nh;
                        let scale = 1.0 / (hd as f64).sqrt();
                        let mut o = Array2::zeros((dims.seq_len, d));
                        let mut a_heads = Vec::with_capacity(nh);
                        for hh in 0..nh {
                            let cols = s![.., hh * hd..(hh + 1) * hd];
                            let qh = q.slice(cols);
                            let kh = kk.slice(cols);
                            let vh = v.slice(cols);
                            let mut sc = qh.dot(&kh.t());
                            sc.mapv_inplace(|v| v * scale);
                            softmax_rows(&mut sc);
                            let oh = sc.dot(&vh);
                            o.slice_mut(cols).assign(&oh);
                            a_heads.push(sc);
                        }
                        let out = affine(&o, mat(p, &l.tensors[blk.wo]), bias(p, &l.tensors[blk.bo]));
                        (out, Some(AttnCache { p: pool, q, k: kk, v, a: a_heads, o }))
                    }
                };
                let dropped1 = match mask1 {
                    Some(m) => &sub1 * m,
                    None => sub1,
                };
                let h_mid = &h_in + &dropped1;
                let z1 = affine(&h_mid, mat(p, &l.tensors[blk.ff1_w]), bias(p, &l.tensors[blk.ff1_b]));
                let a1 = gelu_arr(&z1);
                let z2 = affine(&a1, mat(p, &l.tensors[blk.ff2_w]), bias(p, &l.tensors[blk.ff2_b]));
                let dropped2 = match mask2 {
                    Some(m) => &z2 * m,
                    None => z2,
                };
                h = &h_mid + &dropped2;
                cache.blocks.push(BlockCache { h_in, attn: attn_cache, h_mid, z1, a1 });
            }
            let pooled = h.mean_axis(Axis(0)).expect("seq_len > 0");
            cache.pooled = pooled.clone();
            let mut m = pooled;
            cache.head_inputs.push(m.clone());
            for &(wi, bi) in &ix.hidden {
                let w = mat(p, &l.tensors[wi]);
                let b = bias(p, &l.tensors[bi]);
                let mut z = w.dot(&m);
                for (zv, bv) in z.iter_mut().zip(b) {
                    *zv += bv;
                }
                cache.head_pre.push(z.clone());
                m = z.mapv(gelu);
                cache.head_inputs.push(m.clone());
            }
            let w = mat(p, &l.tensors[ix.out_w]);
            let b = bias(p, &l.tensors[ix.out_b]);
            let mut o = w.dot(&m);
            for (ov, bv) in o.iter_mut().zip(b) {
                *ov += bv;
            }
            let y = Array2::from_shape_vec((dims.pred_len, dims.c_out), o.to_vec())
                .expect("head output length");
            (y, cache)
        }
    }
}

/// Accumulate one window's parameter gradients given ∂loss/∂prediction.
fn backward_window(
    model: &Model,
    cache: &Cache,
    masks: Option<&WindowMasks>,
    d_y: &Array2<f64>,
    grads: &mut [f64],
) {
    let p = &model.params;
    let l = &model.layout;
    let ix = &model.ix;
    let dims = &model.dims;
    match model.variant {
        ModelVariant::Linear => {
            let tw = &l.tensors[ix.head_w];
            let tb = &l.tensors[ix.head_b];
            let x = &cache.x;
            // dW[i,s] += Σ_j dY[i,j]·x[s, out_in[j]];  db[i] += Σ_j dY[i,j]
            let gw = &mut grads[tw.offset..tw.offset + tw.len()];
            for (j, &src) in dims.out_in.iter().enumerate() {
                for i in 0..dims.pred_len {
                    let g = d_y[[i, j]];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut gw[i * dims.seq_len..(i + 1) * dims.seq_len];
                    for (sv, xr) in row.iter_mut().zip(x.column(src)) {
                        *sv += g * xr;
                    }
                }
            }
            let gb = &mut grads[tb.offset..tb.offset + tb.len()];
            for i in 0..dims.pred_len {
                for j in 0..dims.c_out {
                    gb[i] += d_y[[i, j]];
                }
            }
        }
        ModelVariant::Mixer | ModelVariant::AttentionLite => {
            let d = model.hp.d_model;
            // output layer
            let g_o = Array1::from_iter(d_y.iter().copied()); // row-major flatten
            let m_last = cache.head_inputs.last().expect("head input");
            let tw = &l.tensors[ix.out_w];
            add_mat(grads, tw, &outer(&g_o, m_last));
            add_vec(grads, &l.tensors[ix.out_b], &g_o);
            let mut g_m = mat(p, tw).t().dot(&g_o);
            // hidden head layers, reversed
            for (k, &(wi, bi)) in ix.hidden.iter().enumerate().rev() {
                let z = &cache.head_pre[k];
                let g_z = Array1::from_shape_fn(d, |i| g_m[i] * gelu_prime(z[i]));
                add_mat(grads, &l.tensors[wi], &outer(&g_z, &cache.head_inputs[k]));
                add_vec(grads, &l.tensors[bi], &g_z);
                g_m = mat(p, &l.tensors[wi]).t().dot(&g_z);
            }
            // mean-pool: every timestep receives g_m / seq
            let seq = dims.seq_len;
            let inv = 1.0 / seq as f64;
            let mut g_h = Array2::from_shape_fn((seq, d), |(_, j)| g_m[j] * inv);
            // blocks, reversed
            for (k, (blk, bc)) in ix.blocks.iter().zip(&cache.blocks).enumerate().rev() {
                let mask1 = masks.map(|m| &m.sites[2 * k]);
                let mask2 = masks.map(|m| &m.sites[2 * k + 1]);
                // second sublayer: h = h_mid + D2 ⊙ (ff2(gelu(ff1(h_mid))))
                let g_z2 = match mask2 {
                    Some(m) => &g_h * m,
                    None => g_h.clone(),
                };
                add_mat(grads, &l.tensors[blk.ff2_w], &g_z2.t().dot(&bc.a1));
                add_bias_rowsum(grads, &l.tensors[blk.ff2_b], &g_z2);
                let g_a1 = g_z2.dot(&mat(p, &l.tensors[blk.ff2_w]));
                let g_z1 = {
                    let mut g = g_a1;
                    g.zip_mut_with(&bc.z1, |gv, zv| *gv *= gelu_prime(*zv));
                    g
                };
                add_mat(grads, &l.tensors[blk.ff1_w], &g_z1.t().dot(&bc.h_mid));
                add_bias_rowsum(grads, &l.tensors[blk.ff1_b], &g_z1);
                let mut g_h_mid = &g_h + &g_z1.dot(&mat(p, &l.tensors[blk.ff1_w]));
                // first sublayer: h_mid = h_in + D1 ⊙ sub1(h_in)
                let g_sub1 = match mask1 {
                    Some(m) => &g_h_mid * m,
                    None => g_h_mid.clone(),
                };
                match model.variant {
                    ModelVariant::Mixer => {
                        add_mat(grads, &l.tensors[blk.time_w], &g_sub1.dot(&bc.h_in.t()));
                        // time bias broadcasts across channels: sum over d
                        let tb = &l.tensors[blk.time_b];
                        let dst = &mut grads[tb.offset..tb.offset + tb.len()];
                        for (i, row) in g_sub1.rows().into_iter().enumerate() {
                            dst[i] += row.sum();
                        }
                        g_h_mid += &mat(p, &l.tensors[blk.time_w]).t().dot(&g_sub1);
                    }
                    _ => {
                        let ac = bc.attn.as_ref().expect("attention cache");
                        // out = O·Woᵀ + bo
                        add_mat(grads, &l.tensors[blk.wo], &g_sub1.t().dot(&ac.o));
                        add_bias_rowsum(grads, &l.tensors[blk.bo], &g_sub1);
                        let g_o_all = g_sub1.dot(&mat(p, &l.tensors[blk.wo]));
                        let nh = model.hp.n_heads;
                        let hd = d / nh;
                        let scale = 1.0 / (hd as f64).sqrt();
                        let lk = ac.p.nrows();
                        let mut g_q = Array2::zeros((seq, d));
                        let mut g_k = Array2::zeros((lk, d));
                        let mut g_v = Array2::zeros((lk, d));
                        for hh in 0..nh {
                            let cols = s![.., hh * hd..(hh + 1) * hd];
                            let a = &ac.a[hh];
                            let g_oh = g_o_all.slice(cols);
                            let vh = ac.v.slice(cols);
                            let g_a = g_oh.dot(&vh.t()); // seq × lk
                            g_v.slice_mut(cols).assign(&a.t().dot(&g_oh));
                            // softmax backward per row
                            let mut g_s = Array2::zeros((seq, lk));
                            for i in 0..seq {
                                let mut dot = 0.0;
                                for t in 0..lk {
                                    dot += g_a[[i, t]] * a[[i, t]];
                                }
                                for t in 0..lk {
                                    g_s[[i, t]] = a[[i, t]] * (g_a[[i, t]] - dot);
                                }
                            }
                            g_s.mapv_inplace(|v| v * scale);
                            let kh = ac.k.slice(cols);
                            let qh = ac.q.slice(cols);
                            g_q.slice_mut(cols).assign(&g_s.dot(&kh));
                            g_k.slice_mut(cols).assign(&g_s.t().dot(&qh));
                        }
                        add_mat(grads, &l.tensors[blk.wq], &g_q.t().dot(&bc.h_in));
                        add_bias_rowsum(grads, &l.tensors[blk.bq], &g_q);
                        add_mat(grads, &l.tensors[blk.wk], &g_k.t().dot(&ac.p));
                        add_bias_rowsum(grads, &l.tensors[blk.bk], &g_k);
                        add_mat(grads, &l.tensors[blk.wv], &g_v.t().dot(&ac.p));
                        add_bias_rowsum(grads, &l.tensors[blk.bv], &g_v);
                        let g_p = &g_k.dot(&mat(p, &l.tensors[blk.wk]))
                            + &g_v.dot(&mat(p, &l.tensors[blk.wv]));
                        g_h_mid += &g_q.dot(&mat(p, &l.tensors[blk.wq]));
                        g_h_mid += &avg_pool_time_backward(&g_p, model.hp.factor, seq);
                    }
                }
                g_h = g_h_mid;
            }
            // embedding
            add_mat(grads, &l.tensors[ix.embed_w], &g_h.t().dot(&cache.x));
            add_bias_rowsum(grads, &l.tensors[ix.embed_b], &g_h);
        }
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (n, m) = (a.len(), b.len());
    Array2::from_shape_fn((n, m), |(i, j)| a[i] * b[j])
}

// ---------------------------------------------------------------------------
// batch-level entry points

fn check_masks(model: &Model, inputs: &[Array2<f64>], masks: Option<&[WindowMasks]>) -> Result<()> {
    if let Some(ms) = masks {
        if ms.len() != inputs.len() {
            return Err(Error::Model(format!(
                "{} mask sets for {} windows",
                ms.len(),
                inputs.len()
            )));
        }
        let want = model.dropout_sites();
        if let Some(m) = ms.iter().find(|m| m.sites.len() != want) {
            return Err(Error::Model(format!(
                "mask set has {} sites, model has {want}",
                m.sites.len()
            )));
        }
    }
    Ok(())
}

/// Run the model over a batch of input windows. `masks` enables training
/// mode (dropout); without masks the pass is deterministic.
pub fn forward(
    model: &Model,
    inputs: &[Array2<f64>],
    masks: Option<&[WindowMasks]>,
) -> Result<Vec<Array2<f64>>> {
    check_masks(model, inputs, masks)?;
    inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            check_input_shape(model, x)?;
            Ok(forward_window(model, x, masks.map(|m| &m[i])).0)
        })
        .collect()
}

/// Training-mode forward: draws one mask set per window from `rng` (in
/// window order), then runs [`forward`].
pub fn forward_train<R: Rng>(
    model: &Model,
    inputs: &[Array2<f64>],
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    let masks: Vec<WindowMasks> = inputs.iter().map(|_| draw_masks(model, rng)).collect();
    forward(model, inputs, Some(&masks))
}

fn check_batch(
    model: &Model,
    inputs: &[Array2<f64>],
    targets: &[Array2<f64>],
    masks: Option<&[WindowMasks]>,
) -> Result<()> {
    if inputs.len() != targets.len() {
        return Err(Error::Model(format!(
            "{} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::Model("empty batch".into()));
    }
    check_masks(model, inputs, masks)?;
    let want = (model.dims.pred_len, model.dims.c_out);
    for x in inputs {
        check_input_shape(model, x)?;
    }
    if let Some(t) = targets.iter().find(|t| t.dim() != want) {
        return Err(Error::Model(format!(
            "target window shape {:?} does not match expected {:?}",
            t.dim(),
            want
        )));
    }
    Ok(())
}

/// Mean-squared-error loss over every element of the batch (forward only).
pub fn loss(
    model: &Model,
    inputs: &[Array2<f64>],
    targets: &[Array2<f64>],
    masks: Option<&[WindowMasks]>,
) -> Result<f64> {
    check_batch(model, inputs, targets, masks)?;
    let denom = (inputs.len() * model.dims.pred_len * model.dims.c_out) as f64;
    let mut se = 0.0;
    for (i, (x, t)) in inputs.iter().zip(targets).enumerate() {
        let (y, _) = forward_window(model, x, masks.map(|m| &m[i]));
        let d = &y - t;
        let w: f64 = d.iter().map(|v| v * v).sum();
        if !w.is_finite() {
            return Err(Error::NonFiniteLoss(i));
        }
        se += w;
    }
    Ok(se / denom)
}

/// Batch MSE and analytic gradients for every parameter.
///
/// Windows are processed in fixed chunks of [`GRAD_CHUNK`] and chunk
/// results are folded in index order, so the result is bit-identical
/// whether or not the chunks ran in parallel.
pub fn loss_and_grads(
    model: &Model,
    inputs: &[Array2<f64>],
    targets: &[Array2<f64>],
    masks: Option<&[WindowMasks]>,
) -> Result<(f64, Vec<f64>)> {
    check_batch(model, inputs, targets, masks)?;
    let n = inputs.len();
    let denom = (n * model.dims.pred_len * model.dims.c_out) as f64;
    let ranges: Vec<(usize, usize)> = (0..n)
        .step_by(GRAD_CHUNK)
        .map(|s| (s, (s + GRAD_CHUNK).min(n)))
        .collect();
    struct ChunkOut {
        se: f64,
        grads: Vec<f64>,
        bad: Option<usize>,
    }
    let chunks = exec::map_collect(&ranges, |&(lo, hi)| {
        let mut grads = vec![0.0; model.param_count()];
        let mut se = 0.0;
        let mut bad = None;
        for w in lo..hi {
            let wm = masks.map(|m| &m[w]);
            let (y, cache) = forward_window(model, &inputs[w], wm);
            let diff = &y - &targets[w];
            let wse: f64 = diff.iter().map(|v| v * v).sum();
            if !wse.is_finite() {
                bad = Some(w);
                break;
            }
            se += wse;
            let d_y = diff.mapv(|v| 2.0 * v / denom);
            backward_window(model, &cache, wm, &d_y, &mut grads);
        }
        ChunkOut { se, grads, bad }
    });
    let mut se = 0.0;
    let mut grads = vec![0.0; model.param_count()];
    for c in &chunks {
        if let Some(w) = c.bad {
            return Err(Error::NonFiniteLoss(w));
        }
        se += c.se;
        for (g, cg) in grads.iter_mut().zip(&c.grads) {
            *g += cg;
        }
    }
    Ok((se / denom, grads))
}

/// MSE and MAE over every element of every window, on the normalized scale.
pub fn evaluate(model: &Model, ws: &WindowSet) -> Result<(f64, f64)> {
    if ws.is_empty() {
        return Err(Error::Model("evaluation on an empty window set".into()));
    }
    let n = ws.len();
    let ranges: Vec<(usize, usize)> = (0..n)
        .step_by(EVAL_CHUNK)
        .map(|s| (s, (s + EVAL_CHUNK).min(n)))
        .collect();
    let sums = exec::map_collect(&ranges, |&(lo, hi)| {
        let mut se = 0.0;
        let mut ae = 0.0;
        for w in lo..hi {
            let x = ws.input(w);
            let t = ws.target(w);
            let (y, _) = forward_window(model, &x, None);
            for (a, b) in y.iter().zip(t.iter()) {
                let d = a - b;
                se += d * d;
                ae += d.abs();
            }
        }
        (se, ae)
    });
    let denom = (n * model.dims.pred_len * model.dims.c_out) as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (s, a) in sums {
        se += s;
        ae += a;
    }
    Ok((se / denom, ae / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{rng_from, DOMAIN_TRAIN};
    use proptest::prelude::*;
    use rand::Rng;

    fn dims(seq: usize, pred: usize, c: usize) -> TaskDims {
        TaskDims { seq_len: seq, pred_len: pred, c_in: c, c_out: c, out_in: (0..c).collect() }
    }

    fn small_hp() -> HParams {
        HParams {
            d_model: 8,
            d_ff: 16,
            n_heads: 2,
            e_layers: 2,
            d_layers: 2,
            factor: 2,
            batch_size: 4,
            learning_rate: 0.001,
            train_epochs: 3,
            dropout: DROPOUT_P,
        }
    }

    fn random_batch(
        d: &TaskDims,
        n: usize,
        seed: u64,
    ) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut rng = rng_from(seed, DOMAIN_TRAIN, 7);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
        };
        let inputs = (0..n).map(|_| mk(&mut rng, d.seq_len, d.c_in)).collect();
        let targets = (0..n).map(|_| mk(&mut rng, d.pred_len, d.c_out)).collect();
        (inputs, targets)
    }

    #[test]
    fn linear_parameter_count_is_shared_across_channels() {
        let d = dims(96, 96, 7);
        let hp = small_hp();
        assert_eq!(param_count(ModelVariant::Linear, &hp, &d), 96 * 96 + 96);
        // channel count does not change the linear map
        assert_eq!(
            param_count(ModelVariant::Linear, &hp, &dims(96, 96, 21)),
            9312
        );
    }

    #[test]
    fn block_parameter_counts_match_closed_forms() {
        let d = dims(12, 6, 3);
        let hp = small_hp();
        let dm = hp.d_model;
        let expect_mixer = dm * 3 + dm // embed
            + hp.e_layers * ((12 * 12 + 12) + (hp.d_ff * dm + hp.d_ff) + (dm * hp.d_ff + dm))
            + (hp.d_layers - 1) * (dm * dm + dm)
            + (6 * 3) * dm + 6 * 3;
        assert_eq!(param_count(ModelVariant::Mixer, &hp, &d), expect_mixer);

        let expect_attn = dm * 3 + dm
            + hp.e_layers * (4 * (dm * dm + dm) + (hp.d_ff * dm + hp.d_ff) + (dm * hp.d_ff + dm))
            + (hp.d_layers - 1) * (dm * dm + dm)
            + (6 * 3) * dm + 6 * 3;
        assert_eq!(param_count(ModelVariant::AttentionLite, &hp, &d), expect_attn);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let d = dims(12, 6, 3);
        let hp = small_hp();
        let a = build_model(ModelVariant::Mixer, &hp, &d, 42).unwrap();
        let b = build_model(ModelVariant::Mixer, &hp, &d, 42).unwrap();
        let c = build_model(ModelVariant::Mixer, &hp, &d, 43).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        for t in &a.layout().tensors {
            let bound = 1.0 / (t.fan_in as f64).sqrt();
            for v in &a.params[t.offset..t.offset + t.len()] {
                assert!(v.abs() < bound);
            }
        }
    }

    #[test]
    fn attention_requires_divisible_heads() {
        let d = dims(12, 6, 3);
        let mut hp = small_hp();
        hp.d_model = 9;
        assert!(build_model(ModelVariant::AttentionLite, &hp, &d, 1).is_err());
        assert!(build_model(ModelVariant::Mixer, &hp, &d, 1).is_ok());
    }

    #[test]
    fn zeroed_linear_predicts_zero_and_eval_is_repeatable() {
        let d = dims(12, 6, 3);
        let hp = small_hp();
        let mut m = build_model(ModelVariant::Linear, &hp, &d, 5).unwrap();
        m.params.fill(0.0);
        let (inputs, _) = random_batch(&d, 2, 1);
        let y = forward(&m, &inputs, None).unwrap();
        assert_eq!(y.len(), 2);
        assert_eq!(y[0].dim(), (6, 3));
        assert!(y.iter().all(|w| w.iter().all(|v| *v == 0.0)));

        let m2 = build_model(ModelVariant::AttentionLite, &hp, &d, 5).unwrap();
        let a = forward(&m2, &inputs, None).unwrap();
        let b = forward(&m2, &inputs, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_wrong_shapes() {
        let d = dims(12, 6, 3);
        let m = build_model(ModelVariant::Linear, &small_hp(), &d, 5).unwrap();
        let bad = vec![Array2::<f64>::zeros((11, 3))];
        let err = forward(&m, &bad, None).unwrap_err().to_string();
        assert!(err.contains("(11, 3)") && err.contains("(12, 3)"));
    }

    #[test]
    fn perfect_predictions_give_zero_loss_and_gradients() {
        let d = dims(12, 6, 3);
        let mut m = build_model(ModelVariant::Linear, &small_hp(), &d, 5).unwrap();
        m.params.fill(0.0);
        let (inputs, _) = random_batch(&d, 3, 2);
        let zeros: Vec<Array2<f64>> = (0..3).map(|_| Array2::zeros((6, 3))).collect();
        let (l, g) = loss_and_grads(&m, &inputs, &zeros, None).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bias_gradients_are_symmetric_under_target_negation() {
        let d = dims(12, 6, 3);
        let mut m = build_model(ModelVariant::Linear, &small_hp(), &d, 5).unwrap();
        m.params.fill(0.0);
        let (inputs, targets) = random_batch(&d, 3, 4);
        let neg: Vec<Array2<f64>> = targets.iter().map(|t| t.mapv(|v| -v)).collect();
        let (_, g1) = loss_and_grads(&m, &inputs, &targets, None).unwrap();
        let (_, g2) = loss_and_grads(&m, &inputs, &neg, None).unwrap();
        let b = m.layout().by_name("head.b").unwrap().clone();
        for i in b.offset..b.offset + b.len() {
            assert!((g1[i].abs() - g2[i].abs()).abs() < 1e-12);
        }
    }

    /// Central finite differences over every parameter.
    fn finite_diff_check(variant: ModelVariant, seed: u64, with_masks: bool) {
        let d = dims(10, 4, 3);
        let hp = HParams { e_layers: 2, d_layers: 2, ..small_hp() };
        let mut m = build_model(variant, &hp, &d, seed).unwrap();
        let (inputs, targets) = random_batch(&d, 4, seed);
        let masks: Option<Vec<WindowMasks>> = with_masks.then(|| {
            let mut rng = rng_from(seed, DOMAIN_TRAIN, 99);
            inputs.iter().map(|_| draw_masks(&m, &mut rng)).collect()
        });
        let (_, analytic) = loss_and_grads(&m, &inputs, &targets, masks.as_deref()).unwrap();
        let eps = 1e-4;
        let mut worst = 0.0f64;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = m.params[i];
            m.params[i] = orig + eps;
            let lp = loss(&m, &inputs, &targets, masks.as_deref()).unwrap();
            m.params[i] = orig - eps;
            let lm = loss(&m, &inputs, &targets, masks.as_deref()).unwrap();
            m.params[i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "{variant} seed {seed}: worst relative error {worst:.3e}");
    }

    #[test]
    fn gradients_match_finite_differences_mixer() {
        finite_diff_check(ModelVariant::Mixer, 11, true);
    }

    #[test]
    fn gradients_match_finite_differences_attention() {
        finite_diff_check(ModelVariant::AttentionLite, 12, true);
    }

    #[test]
    fn gradients_match_finite_differences_linear() {
        finite_diff_check(ModelVariant::Linear, 13, false);
    }

    #[test]
    fn evaluate_matches_hand_arithmetic() {
        // 1 window, pred 2 × 1 channel: predictions [1, 3] vs targets [0, 0]
        let d = dims(2, 2, 1);
        let mut m = build_model(ModelVariant::Linear, &small_hp(), &d, 1).unwrap();
        m.params.fill(0.0);
        // head.w is 2×2, head.b 2; choose b = [1, 3] and zero weights so the
        // prediction ignores the input
        let b = m.layout().by_name("head.b").unwrap().clone();
        m.params[b.offset] = 1.0;
        m.params[b.offset + 1] = 3.0;
        let values = std::sync::Arc::new(Array2::zeros((4, 1)));
        let ws = WindowSet::new(
            values,
            0..4,
            std::sync::Arc::new(vec![0]),
            std::sync::Arc::new(vec![0]),
            2,
            2,
        );
        assert_eq!(ws.len(), 1);
        let (mse, mae) = evaluate(&m, &ws).unwrap();
        assert!((mse - 5.0).abs() < 1e-12);
        assert!((mae - 2.0).abs() < 1e-12);
        assert!(mae * mae <= mse + 1e-12);
    }

    #[test]
    fn evaluate_rejects_empty_windows() {
        let d = dims(2, 2, 1);
        let m = build_model(ModelVariant::Linear, &small_hp(), &d, 1).unwrap();
        let ws = WindowSet::new(
            std::sync::Arc::new(Array2::zeros((3, 1))),
            0..3,
            std::sync::Arc::new(vec![0]),
            std::sync::Arc::new(vec![0]),
            2,
            2,
        );
        assert!(ws.is_empty());
        assert!(evaluate(&m, &ws).is_err());
    }

    #[test]
    fn memory_estimate_matches_pinned_constant_and_pool_rule() {
        let hp = HParams {
            d_model: 512,
            d_ff: 2048,
            n_heads: 8,
            e_layers: 2,
            d_layers: 1,
            factor: 4,
            batch_size: 32,
            learning_rate: 0.0001,
            train_epochs: 10,
            dropout: DROPOUT_P,
        };
        let d = dims(96, 96, 7);
        // linear: P = 9312, activations = batch·seq
        assert_eq!(estimate_memory(ModelVariant::Linear, &hp, &d), 124_032);
        // tighter pooling (factor 1) must cost more than factor 4
        let f1 = HParams { factor: 1, ..hp.clone() };
        assert!(
            estimate_memory(ModelVariant::AttentionLite, &f1, &d)
                > estimate_memory(ModelVariant::AttentionLite, &hp, &d)
        );
        // doubling batch size strictly increases every variant
        for v in ModelVariant::ALL {
            let hp2 = HParams { batch_size: 64, ..hp.clone() };
            assert!(estimate_memory(v, &hp2, &d) > estimate_memory(v, &hp, &d));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn memory_estimate_is_monotone(
            seed in 0u64..10_000,
            coord in 0usize..5,
        ) {
            let mut rng = rng_from(seed, DOMAIN_TRAIN, coord as u64);
            let pick = |rng: &mut rand_chacha::ChaCha8Rng, v: &[usize]| v[rng.gen_range(0..v.len())];
            let dimsv = [16usize, 32, 64, 128, 256, 512, 1024, 2048, 4096];
            let mut hp = HParams {
                d_model: pick(&mut rng, &dimsv),
                d_ff: pick(&mut rng, &dimsv),
                n_heads: pick(&mut rng, &[2, 4, 8, 16]),
                e_layers: pick(&mut rng, &[1, 2, 3]),
                d_layers: pick(&mut rng, &[1, 2]),
                factor: pick(&mut rng, &[1, 2, 3, 4]),
                batch_size: pick(&mut rng, &[4, 16, 32, 64, 128, 256]),
                learning_rate: 0.001,
                train_epochs: 1,
                dropout: DROPOUT_P,
            };
            let mut c = pick(&mut rng, &[1, 3, 7, 21]);
            let variant = ModelVariant::ALL[rng.gen_range(0..3)];
            let lo = estimate_memory(variant, &hp, &dims(24, 12, c));
            // bump exactly one coordinate upward
            match coord {
                0 => hp.batch_size *= 2,
                1 => hp.d_model *= 2,
                2 => hp.d_ff *= 2,
                3 => hp.e_layers += 1,
                _ => c *= 2,
            }
            let hi = estimate_memory(variant, &hp, &dims(24, 12, c));
            prop_assert!(hi >= lo);
        }
    }
}
