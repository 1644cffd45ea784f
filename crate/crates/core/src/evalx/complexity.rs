use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::FusionModel;
use crate::location::{LocationCode, CODE_BITS};
use crate::numerics::{Graph, Tensor};

// Per-element operation counts of the non-matmul kernels.
const LAYER_NORM_PER_ELEM: u64 = 7;
const SOFTMAX_PER_ELEM: u64 = 4;
const GELU_PER_ELEM: u64 = 8;

/// The three reported indicators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityReport {
    pub parameters_millions: f64,
    pub gflops_per_forward: f64,
    pub peak_memory_gb_estimate: f64,
}

/// Exact counts behind a [`ComplexityReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityAudit {
    pub parameters: u64,
    pub flops: u64,
    pub activation_values: usize,
    pub batch: usize,
    pub breakdown: FlopBreakdown,
    pub report: ComplexityReport,
}

/// Forward flops split by component. Input preprocessing (patchify and the
/// wavelet transform) is not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub vit_embedding: u64,
    pub vit_encoder: u64,
    pub vit_head: u64,
    pub loc_embedding: u64,
    pub loc_encoder: u64,
    pub loc_head: u64,
    pub classifier: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.vit_embedding
            + self.vit_encoder
            + self.vit_head
            + self.loc_embedding
            + self.loc_encoder
            + self.loc_head
            + self.classifier
    }

    pub fn encoder(&self) -> u64 {
        self.vit_encoder + self.loc_encoder
    }
}

/// `x·W + b` with `x: [m×k]`, `W: [k×n]`.
pub fn linear_flops(m: u64, k: u64, n: u64) -> u64 {
    2 * m * k * n + m * n
}

/// One pre-norm encoder layer over `n` tokens of width `d`.
pub fn encoder_layer_flops(n: usize, d: usize, heads: usize, mlp_ratio: usize) -> u64 {
    let (n, d, h) = (n as u64, d as u64, heads as u64);
    let dk = d / h;
    let hidden = d * mlp_ratio as u64;
    let per_head = 3 * linear_flops(n, d, dk) // Q, K, V
        + 2 * n * n * dk // Q·Kᵀ
        + n * n // 1/√d_k
        + SOFTMAX_PER_ELEM * n * n
        + 2 * n * n * dk; // A·V
    let attention = LAYER_NORM_PER_ELEM * n * d + h * per_head + linear_flops(n, d, d) + n * d;
    let mlp = LAYER_NORM_PER_ELEM * n * d
        + linear_flops(n, d, hidden)
        + GELU_PER_ELEM * n * hidden
        + linear_flops(n, hidden, d)
        + n * d;
    attention + mlp
}

pub fn flop_breakdown(model: &FusionModel) -> FlopBreakdown {
    let mut b = FlopBreakdown::default();
    if let Some(v) = &model.vit {
        let c = v.config;
        let d = c.patch.embed_dim as u64;
        let n = c.patch.patch_count() as u64;
        let seq = c.sequence_len();
        b.vit_embedding = 2 * n * c.token_width() as u64 * d + seq as u64 * d;
        b.vit_encoder = c.depth as u64 * encoder_layer_flops(seq, c.patch.embed_dim, c.heads, c.mlp_ratio);
        b.vit_head = LAYER_NORM_PER_ELEM * seq as u64 * d;
    }
    if let Some(l) = &model.loc {
        let c = l.config;
        let d = c.d_model as u64;
        let n = CODE_BITS as u64;
        b.loc_embedding = n * d;
        b.loc_encoder = c.depth as u64 * encoder_layer_flops(CODE_BITS, c.d_model, c.heads, c.mlp_ratio);
        b.loc_head = n * d + d + LAYER_NORM_PER_ELEM * d;
    }
    b.classifier = linear_flops(1, model.config.latent_width() as u64, model.k() as u64);
    b
}

/// Values held on the tape during one forward pass of a zero input.
pub fn activation_values(model: &FusionModel) -> Result<usize> {
    let image = model.vit.as_ref().map(|v| {
        let p = v.config.patch;
        Tensor::zeros(&[p.image_size, p.image_size, p.channels])
    });
    let code = LocationCode::from_id(0)?;
    let mut g = Graph::with_params(&model.store);
    model.forward(&mut g, image.as_ref(), Some(&code))?;
    Ok(g.activation_values())
}

/// Memory is estimated as parameters plus `batch` copies of one forward's
/// activations, at 8 bytes per value.
pub fn complexity_audit(model: &FusionModel, batch: usize) -> Result<ComplexityAudit> {
    let parameters = model.store.num_values() as u64;
    let breakdown = flop_breakdown(model);
    let flops = breakdown.total();
    let acts = activation_values(model)?;
    let values = parameters as f64 + batch as f64 * acts as f64;
    Ok(ComplexityAudit {
        parameters,
        flops,
        activation_values: acts,
        batch,
        breakdown,
        report: ComplexityReport {
            parameters_millions: parameters as f64 / 1e6,
            gflops_per_forward: flops as f64 / 1e9,
            peak_memory_gb_estimate: values * 8.0 / 1e9,
        },
    })
}

pub fn complexity(model: &FusionModel, batch: usize) -> Result<ComplexityReport> {
    Ok(complexity_audit(model, batch)?.report)
}
