//! Scaled dot-product attention, multi-head attention and the pre-norm
//! encoder layer shared by the image and location branches.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamKind, ParamStore, Tensor, Var};

pub const LN_EPS: f64 = 1e-6;

/// Width and head count of one attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::contract(format!(
                "d_model {d_model} must be a positive multiple of heads {heads}"
            )));
        }
        Ok(Self { d_model, heads })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn d_v(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Affine map `x·W + b` with `W: [fan_in × fan_out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = store.add_normal(format!("{name}.weight"), &[fan_in, fan_out], std, rng);
        let bias = store.add(
            format!("{name}.bias"),
            ParamKind::Bias,
            Tensor::zeros(&[1, fan_out]),
        );
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Layer-norm gain and shift.
#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn init(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            ParamKind::Norm,
            Tensor::full(&[1, width], 1.0),
        );
        let beta = store.add(
            format!("{name}.beta"),
            ParamKind::Norm,
            Tensor::zeros(&[1, width]),
        );
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Query, key and value projections of a single head.
#[derive(Debug, Clone, Copy)]
pub struct HeadProjection {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

/// Parameters of one encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub config: AttentionConfig,
    pub attn_norm: Norm,
    pub heads: Vec<HeadProjection>,
    pub output: Linear,
    pub mlp_norm: Norm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl EncoderLayerParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: AttentionConfig,
        mlp_ratio: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d = config.d_model;
        let attn_norm = Norm::init(store, &format!("{prefix}.ln1"), d);
        let heads = (0..config.heads)
            .map(|h| HeadProjection {
                query: Linear::init(store, &format!("{prefix}.head{h}.q"), d, config.d_k(), rng),
                key: Linear::init(store, &format!("{prefix}.head{h}.k"), d, config.d_k(), rng),
                value: Linear::init(store, &format!("{prefix}.head{h}.v"), d, config.d_v(), rng),
            })
            .collect();
        let output = Linear::init(
            store,
            &format!("{prefix}.out"),
            config.heads * config.d_v(),
            d,
            rng,
        );
        let mlp_norm = Norm::init(store, &format!("{prefix}.ln2"), d);
        let hidden = mlp_ratio * d;
        let mlp_in = Linear::init(store, &format!("{prefix}.mlp.fc1"), d, hidden, rng);
        let mlp_out = Linear::init(store, &format!("{prefix}.mlp.fc2"), hidden, d, rng);
        Self {
            config,
            attn_norm,
            heads,
            output,
            mlp_norm,
            mlp_in,
            mlp_out,
        }
    }
}

/// `softmax(Q·Kᵀ / √d_k)`, one row of weights per query.
pub fn attention_weights(g: &mut Graph<'_>, q: Var, k: Var) -> Result<Var> {
    let (qs, ks) = (g.value(q).shape().to_vec(), g.value(k).shape().to_vec());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::Shape {
            op: "attention",
            left: qs,
            right: ks,
        });
    }
    let d_k = qs[1] as f64;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / d_k.sqrt())?;
    g.softmax(scaled, 1)
}

/// `softmax(Q·Kᵀ / √d_k)·V`.
pub fn scaled_dot_attention(g: &mut Graph<'_>, q: Var, k: Var, v: Var) -> Result<Var> {
    if g.value(k).rows() != g.value(v).rows() {
        return Err(Error::Shape {
            op: "attention",
            left: g.value(k).shape().to_vec(),
            right: g.value(v).shape().to_vec(),
        });
    }
    let weights = attention_weights(g, q, k)?;
    g.matmul(weights, v)
}

/// `Concat(head_1, …, head_h)·W^O` with `head_i = Attention(X_q·W_i^Q, X_k·W_i^K, X_v·W_i^V)`.
pub fn multi_head(
    g: &mut Graph<'_>,
    xq: Var,
    xk: Var,
    xv: Var,
    p: &EncoderLayerParams,
) -> Result<Var> {
    let d = p.config.d_model;
    for x in [xq, xk, xv] {
        if g.value(x).cols() != d {
            return Err(Error::contract(format!(
                "multi-head input width {} does not match d_model {d}",
                g.value(x).cols()
            )));
        }
    }
    let mut outs = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let q = head.query.forward(g, xq)?;
        let k = head.key.forward(g, xk)?;
        let v = head.value.forward(g, xv)?;
        outs.push(scaled_dot_attention(g, q, k, v)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.hcat(&outs)? };
    p.output.forward(g, cat)
}

/// `z' = MSA(LN(z)) + z`, then `MLP(LN(z')) + z'`.
pub fn encoder_layer(g: &mut Graph<'_>, z: Var, p: &EncoderLayerParams) -> Result<Var> {
    let normed = p.attn_norm.forward(g, z)?;
    let attn = multi_head(g, normed, normed, normed, p)?;
    let mid = g.add(attn, z)?;

    let normed = p.mlp_norm.forward(g, mid)?;
    let hidden = p.mlp_in.forward(g, normed)?;
    let act = g.gelu(hidden)?;
    let mlp = p.mlp_out.forward(g, act)?;
    g.add(mlp, mid)
}

pub fn encoder_stack(g: &mut Graph<'_>, z: Var, layers: &[EncoderLayerParams]) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::contract("encoder stack needs at least one layer"));
    }
    layers.iter().try_fold(z, |acc, layer| encoder_layer(g, acc, layer))
}
