//! Classification metrics and model complexity accounting.

mod complexity;
mod metrics;

pub use complexity::{
    activation_values, complexity, complexity_audit, encoder_layer_flops, flop_breakdown, linear_flops, ComplexityAudit, ComplexityReport,
    FlopBreakdown,
};
pub use metrics::{
    confusion, metrics, metrics_named, BinaryCounts, ClassMetrics, ConfusionMatrix, MetricsReport,
};

use crate::error::Result;
use crate::exec::Execution;
use crate::fusion::{Example, FusionModel};

/// Predicts every example and reports metrics under the model's class names.
pub fn score(model: &FusionModel, data: &[Example], exec: Execution) -> Result<MetricsReport> {
    let inputs: Vec<_> = data.iter().map(|e| e.input.clone()).collect();
    let predicted: Vec<usize> = model.predict(&inputs, exec)?.iter().map(|p| p.class).collect();
    let truth: Vec<usize> = data.iter().map(|e| e.label).collect();
    metrics_named(&confusion(&truth, &predicted, model.k())?, &model.scheme.names())
}
