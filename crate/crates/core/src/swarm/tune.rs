use std::collections::HashMap;
use std::sync::Mutex;

use super::hyper::DIM;
use super::{HyperSpace, Hyperparams, OptimizerParams, Search, SearchResult};
use crate::error::{Error, Result};
use crate::evalx::{score, MetricsReport};
use crate::exec::Execution;
use crate::fusion::{prepare_samples, train, ClassScheme, FusionModel, ModelConfig, Sample, TrainConfig};

#[derive(Debug, Clone)]
pub struct TuneConfig {
    /// Base configuration; tuned fields are overwritten per candidate.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scheme: ClassScheme,
    pub optimizer: OptimizerParams,
    /// Value ranges of the seven coordinates; `None` uses the default search space.
    pub ranges: Option<[(f64, f64); DIM]>,
    pub seed: u64,
    pub exec: Execution,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub hyperparams: Hyperparams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Validation report of the best configuration.
    pub report: MetricsReport,
    /// Validation macro-F1 of the warm-start (base) configuration.
    pub baseline_f1: f64,
    pub search: SearchResult,
}

/// Trains `model_cfg`/`train_cfg` on `train_set` and scores `val`.
pub fn validation_report(
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    scheme: &ClassScheme,
    train_set: &[Sample],
    val: &[Sample],
    exec: Execution,
) -> Result<MetricsReport> {
    let mut model = FusionModel::new(model_cfg, scheme.clone(), train_cfg.seed)?;
    let train_ex = prepare_samples(&model, train_set, exec)?;
    let val_ex = prepare_samples(&model, val, exec)?;
    train(&mut model, &train_ex, train_cfg, exec)?;
    score(&model, &val_ex, exec)
}

/// Swarm search over the seven training hyperparameters. Fitness is
/// `1 − macro-F1` on `val` after training on `train_set`. Candidate 0 starts
/// at the base configuration, so the result never scores below it.
pub fn tune(cfg: &TuneConfig, train_set: &[Sample], val: &[Sample]) -> Result<TuneResult> {
    if train_set.is_empty() || val.is_empty() {
        return Err(Error::contract("tuning needs nonempty train and validation splits"));
    }
    let space = match cfg.ranges {
        Some(r) => HyperSpace::with_ranges(r, &cfg.model),
        None => HyperSpace::standard(&cfg.model),
    };
    let bounds = space.bounds()?;
    let warm = space.encode_config(&cfg.model, &cfg.train)?;
    let cache: Mutex<HashMap<[u64; DIM], MetricsReport>> = Mutex::new(HashMap::new());

    let report_for = |h: &Hyperparams| -> Result<MetricsReport> {
        if let Some(r) = cache.lock().expect("cache lock").get(&h.key()) {
            return Ok(r.clone());
        }
        let (m, t) = space.apply(h, &cfg.model, &cfg.train);
        let r = validation_report(m, &t, &cfg.scheme, train_set, val, cfg.exec)?;
        cache.lock().expect("cache lock").insert(h.key(), r.clone());
        Ok(r)
    };
    let objective = |x: &[f64]| -> Result<f64> {
        let h = space.decode(x)?;
        Ok(1.0 - report_for(&h)?.macro_f1)
    };

    let mut search = Search::new(bounds, cfg.optimizer, cfg.seed);
    search.exec = cfg.exec;
    search.warm_start = vec![warm.clone()];
    let result = search.run(objective)?;

    let hyperparams = space.decode(&result.best.position)?;
    let report = report_for(&hyperparams)?;
    let baseline_f1 = report_for(&space.decode(&warm)?)?.macro_f1;
    let (model, train) = space.apply(&hyperparams, &cfg.model, &cfg.train);
    Ok(TuneResult {
        hyperparams,
        model,
        train,
        report,
        baseline_f1,
        search: result,
    })
}
