//! Transformer mask estimator with relative-position self-attention and a
//! mask estimator attached to every encoder layer.
//!
//! ```text
//! h₀  = Y·W_in + b_in
//! h'ᵢ = LN(hᵢ₋₁ + MHA(hᵢ₋₁))
//! hᵢ  = LN(h'ᵢ + FFN(h'ᵢ))            FFN = ReLU(x·W₁ + b₁)·W₂ + b₂
//! Mⁱ  = sigmoid(hᵢ·W_estᵢ + b_estᵢ)   reshaped T × F × S_out
//! ```
//!
//! Head `j` scores are `Qⱼ(Kⱼ + rel)ᵀ / √d_k` where `rel[m][n]` is a learned
//! vector indexed by the clipped offset `m − n`. One table of `2M − 1` rows is
//! shared by all heads and layers. There is no causal masking.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::masks::MaskStack;
use crate::math;
use crate::tensor::{Ops, ParamId, ParamSet, Tensor};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Encoder layers `I`.
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    /// Maximum chunk length `M` in frames.
    pub max_len: usize,
    /// Feature dimension `D = C·F`.
    pub input_dim: usize,
    pub freq_bins: usize,
    /// Output streams: speakers followed by one noise stream.
    pub streams: usize,
}

impl ModelConfig {
    /// Desk-scale defaults for a `channels`-microphone input at 129 bins.
    pub fn desk(channels: usize) -> Self {
        ModelConfig {
            layers: 8,
            heads: 4,
            d_model: 64,
            ffn_dim: 256,
            max_len: 200,
            input_dim: channels * 129,
            freq_bins: 129,
            streams: 3,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.ffn_dim == 0 {
            return bad("layers, heads, d_model and ffn_dim must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.max_len == 0 || self.input_dim == 0 || self.freq_bins == 0 {
            return bad("max_len, input_dim and freq_bins must be positive".into());
        }
        if self.streams < 2 {
            return bad(format!("{} streams; need at least one speaker and noise", self.streams));
        }
        Ok(())
    }
}

/// Parameter handles for one encoder layer and its estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub w_head: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub est_w: ParamId,
    pub est_b: ParamId,
}

/// Hidden states and mask estimates of the layers that were run.
#[derive(Debug, Clone)]
pub struct LayerActivation<V> {
    /// `h₀ … h_k` for the `k` executed layers.
    pub hidden: Vec<V>,
    /// `M¹ … M^k`, each `T × (F·S_out)`.
    pub masks: Vec<V>,
}

/// The separator: configuration plus handles into a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Separator {
    pub config: ModelConfig,
    pub input_w: ParamId,
    pub input_b: ParamId,
    pub relpos: ParamId,
    pub layers: Vec<LayerParams>,
}

struct Shapes {
    entries: Vec<(String, [usize; 2], Init)>,
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

impl Separator {
    fn layout(c: &ModelConfig) -> Shapes {
        let mut entries = Vec::new();
        let (d, f) = (c.d_model, c.ffn_dim);
        entries.push(("input.w".into(), [c.input_dim, d], Init::Xavier));
        entries.push(("input.b".into(), [1, d], Init::Zeros));
        entries.push(("relpos".into(), [2 * c.max_len - 1, c.d_k()], Init::Xavier));
        for i in 0..c.layers {
            let p = |n: &str| format!("layer{}.{n}", i + 1);
            entries.push((p("attn.wq"), [d, d], Init::Xavier));
            entries.push((p("attn.wk"), [d, d], Init::Xavier));
            entries.push((p("attn.wv"), [d, d], Init::Xavier));
            entries.push((p("attn.w_head"), [d, d], Init::Xavier));
            entries.push((p("ln1.gain"), [1, d], Init::Ones));
            entries.push((p("ln1.bias"), [1, d], Init::Zeros));
            entries.push((p("ffn.w1"), [d, f], Init::Xavier));
            entries.push((p("ffn.b1"), [1, f], Init::Zeros));
            entries.push((p("ffn.w2"), [f, d], Init::Xavier));
            entries.push((p("ffn.b2"), [1, d], Init::Zeros));
            entries.push((p("ln2.gain"), [1, d], Init::Ones));
            entries.push((p("ln2.bias"), [1, d], Init::Zeros));
            entries.push((p("est.w"), [d, c.freq_bins * c.streams], Init::Xavier));
            entries.push((p("est.b"), [1, c.freq_bins * c.streams], Init::Zeros));
        }
        Shapes { entries }
    }

    fn from_ids(config: ModelConfig, ids: &[ParamId]) -> Self {
        let per = 14;
        let layers = (0..config.layers)
            .map(|i| {
                let b = &ids[3 + i * per..3 + (i + 1) * per];
                LayerParams {
                    wq: b[0],
                    wk: b[1],
                    wv: b[2],
                    w_head: b[3],
                    ln1_gain: b[4],
                    ln1_bias: b[5],
                    ffn_w1: b[6],
                    ffn_b1: b[7],
                    ffn_w2: b[8],
                    ffn_b2: b[9],
                    ln2_gain: b[10],
                    ln2_bias: b[11],
                    est_w: b[12],
                    est_b: b[13],
                }
            })
            .collect();
        Separator {
            config,
            input_w: ids[0],
            input_b: ids[1],
            relpos: ids[2],
            layers,
        }
    }

    /// Fresh parameters: linear weights uniform in `±√(6/(fan_in+fan_out))`,
    /// biases zero, norm gains one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Self, ParamSet)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut ids = Vec::new();
        for (name, [r, c], init) in Self::layout(&config).entries {
            let t = match init {
                Init::Zeros => Tensor::zeros(&[r, c]),
                Init::Ones => Tensor::filled(&[r, c], 1.0),
                Init::Xavier => {
                    let a = math::sqrt(6.0 / (r + c) as f64);
                    let data = (0..r * c).map(|_| rng.random_range(-a..a)).collect();
                    Tensor::new(alloc::vec![r, c], data)?
                }
            };
            ids.push(params.add(name, t)?);
        }
        Ok((Self::from_ids(config, &ids), params))
    }

    /// Resolves parameter handles by name, checking every shape.
    pub fn bind(config: ModelConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let mut ids = Vec::new();
        for (name, shape, _) in Self::layout(&config).entries {
            let id = params
                .id_of(&name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape {
                return Err(Error::Shape {
                    op: "bind",
                    left: params.get(id).shape().to_vec(),
                    right: shape.to_vec(),
                });
            }
            ids.push(id);
        }
        Ok(Self::from_ids(config, &ids))
    }

    /// `h₀ = Y·W_in + b_in`.
    pub fn input_proj<O: Ops>(&self, ops: &mut O, features: &O::V) -> Result<O::V> {
        let x = ops.value(features);
        let (t, dim) = x.dims2("input_proj")?;
        if dim != self.config.input_dim {
            return Err(Error::Config(format!(
                "feature dim {dim} does not match model input dim {}",
                self.config.input_dim
            )));
        }
        if t > self.config.max_len {
            return Err(Error::ChunkTooLong {
                len: t,
                max: self.config.max_len,
            });
        }
        let w = ops.param(self.input_w);
        let b = ops.param(self.input_b);
        let h = ops.matmul(features, &w)?;
        ops.add_row(&h, &b)
    }

    /// Multi-head self-attention with relative position embedding.
    pub fn attention<O: Ops>(&self, ops: &mut O, h: &O::V, layer: &LayerParams) -> Result<O::V> {
        let t = ops.value(h).dims2("attention")?.0;
        let c = &self.config;
        if t > c.max_len {
            return Err(Error::ChunkTooLong { len: t, max: c.max_len });
        }
        let dk = c.d_k();
        let scale = 1.0 / math::sqrt(dk as f64);
        let (wq, wk, wv) = (ops.param(layer.wq), ops.param(layer.wk), ops.param(layer.wv));
        let table = ops.param(self.relpos);
        let q = ops.matmul(h, &wq)?;
        let k = ops.matmul(h, &wk)?;
        let v = ops.matmul(h, &wv)?;
        let mut heads = Vec::with_capacity(c.heads);
        for j in 0..c.heads {
            let qj = ops.slice_cols(&q, j * dk, dk)?;
            let kj = ops.slice_cols(&k, j * dk, dk)?;
            let vj = ops.slice_cols(&v, j * dk, dk)?;
            let content = ops.matmul_bt(&qj, &kj)?;
            let position = ops.relpos_scores(&qj, &table, c.max_len)?;
            let scores = ops.add(&content, &position)?;
            let scores = ops.scale(&scores, scale);
            let weights = ops.softmax_lastdim(&scores)?;
            heads.push(ops.matmul(&weights, &vj)?);
        }
        let cat = ops.concat_cols(&heads)?;
        let w_head = ops.param(layer.w_head);
        ops.matmul(&cat, &w_head)
    }

    /// One post-norm encoder layer.
    pub fn encoder_layer<O: Ops>(&self, ops: &mut O, h: &O::V, layer: &LayerParams) -> Result<O::V> {
        let att = self.attention(ops, h, layer)?;
        let res = ops.add(h, &att)?;
        let (g1, b1) = (ops.param(layer.ln1_gain), ops.param(layer.ln1_bias));
        let mid = ops.layer_norm(&res, &g1, &b1, LAYER_NORM_EPS)?;

        let w1 = ops.param(layer.ffn_w1);
        let bb1 = ops.param(layer.ffn_b1);
        let w2 = ops.param(layer.ffn_w2);
        let bb2 = ops.param(layer.ffn_b2);
        let x = ops.matmul(&mid, &w1)?;
        let x = ops.add_row(&x, &bb1)?;
        let x = ops.relu(&x);
        let x = ops.matmul(&x, &w2)?;
        let x = ops.add_row(&x, &bb2)?;
        let res = ops.add(&mid, &x)?;
        let (g2, b2) = (ops.param(layer.ln2_gain), ops.param(layer.ln2_bias));
        ops.layer_norm(&res, &g2, &b2, LAYER_NORM_EPS)
    }

    /// `sigmoid(h·W_est + b_est)`, a `T × (F·S_out)` matrix.
    pub fn estimate_masks<O: Ops>(&self, ops: &mut O, h: &O::V, layer: &LayerParams) -> Result<O::V> {
        let w = ops.param(layer.est_w);
        let b = ops.param(layer.est_b);
        let logits = ops.matmul(h, &w)?;
        let logits = ops.add_row(&logits, &b)?;
        Ok(ops.sigmoid(&logits))
    }

    /// Runs every layer and every estimator.
    pub fn forward_all<O: Ops>(&self, ops: &mut O, features: &O::V) -> Result<LayerActivation<O::V>> {
        self.forward_layers(ops, features, self.config.layers)
    }

    /// Runs the first `depth` layers with their estimators.
    pub fn forward_layers<O: Ops>(&self, ops: &mut O, features: &O::V, depth: usize) -> Result<LayerActivation<O::V>> {
        if depth == 0 || depth > self.config.layers {
            return Err(Error::Contract(format!(
                "depth {depth} outside 1..={}",
                self.config.layers
            )));
        }
        let mut h = self.input_proj(ops, features)?;
        let mut hidden = Vec::with_capacity(depth + 1);
        let mut masks = Vec::with_capacity(depth);
        hidden.push(h.clone());
        for layer in &self.layers[..depth] {
            h = self.encoder_layer(ops, &h, layer)?;
            masks.push(self.estimate_masks(ops, &h, layer)?);
            hidden.push(h.clone());
        }
        Ok(LayerActivation { hidden, masks })
    }

    /// Converts an estimator output to a [`MaskStack`].
    pub fn to_masks(&self, t: &Tensor) -> Result<MaskStack> {
        MaskStack::from_tensor(t, self.config.freq_bins, self.config.streams)
    }
}
