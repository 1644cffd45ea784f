use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{argmax, regularization, FusionModel, PreparedInput, Regularization};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::location::LocationCode;
use crate::numerics::{Graph, ParamStore, Tensor};

/// Samples per gradient chunk. Fixed so the summation order, and hence the
/// result, does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

/// A raw sample: the modalities a record has, plus its scheme-local label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Option<Tensor>,
    pub location: Option<LocationCode>,
    pub label: usize,
}

/// Turns raw samples into model inputs for `model`'s mode and geometry.
pub fn prepare_samples(model: &FusionModel, samples: &[Sample], exec: Execution) -> Result<Vec<Example>> {
    exec.map(samples, |s| {
        Ok(Example {
            input: model.prepare(s.image.as_ref(), s.location.as_ref())?,
            label: s.label,
        })
    })
    .into_iter()
    .collect()
}

/// A sample prepared for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: PreparedInput,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub l1_reg: f64,
    #[serde(default)]
    pub l2_reg: f64,
    #[serde(default)]
    pub seed: u64,
    /// Heavy-ball coefficient; 0 gives plain SGD.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_momentum() -> f64 {
    0.9
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 30,
            l1_reg: 0.0,
            l2_reg: 0.0,
            seed: 0,
            momentum: default_momentum(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::contract(format!("lr must be finite and nonnegative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be positive"));
        }
        for (name, v) in [("l1_reg", self.l1_reg), ("l2_reg", self.l2_reg)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::contract(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    pub fn regularization(&self) -> Regularization {
        Regularization {
            l1: self.l1_reg,
            l2: self.l2_reg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Full-pass training loss and accuracy. Entry 0 is measured before the
/// first update, entry `e` after epoch `e`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "accuracy"])?;
        for r in &self.records {
            w.write_record([r.epoch.to_string(), r.loss.to_string(), r.accuracy.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy plus the regularization penalty.
    pub loss: f64,
    pub accuracy: f64,
}

fn check_labels(model: &FusionModel, data: &[Example]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::contract("training data is empty"));
    }
    if let Some(bad) = data.iter().find(|e| e.label >= model.k()) {
        return Err(Error::contract(format!(
            "label {} out of range for {} classes",
            bad.label,
            model.k()
        )));
    }
    Ok(())
}

/// Cross-entropy, correctness, and (optionally) the flat gradient of one sample.
fn sample_pass(model: &FusionModel, ex: &Example, want_grad: bool) -> Result<(f64, bool, Option<Vec<f64>>)> {
    let mut g = Graph::with_params(&model.store);
    let logits = model.forward_prepared(&mut g, &ex.input)?;
    let correct = argmax(g.value(logits).data()) == ex.label;
    let ce = g.cross_entropy(logits, ex.label)?;
    let loss = g.value(ce).item();
    let grad = if want_grad {
        Some(g.backward(ce)?.flat_params(&model.store))
    } else {
        None
    };
    Ok((loss, correct, grad))
}

fn penalty(store: &ParamStore, reg: Regularization, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let mut g = Graph::with_params(store);
    match regularization(&mut g, store, reg)? {
        None => Ok((0.0, None)),
        Some(r) => {
            let value = g.value(r).item();
            let grad = if want_grad {
                Some(g.backward(r)?.flat_params(store))
            } else {
                None
            };
            Ok((value, grad))
        }
    }
}

/// Loss and accuracy of a frozen model; samples are scored concurrently.
pub fn evaluate(model: &FusionModel, data: &[Example], reg: Regularization, exec: Execution) -> Result<Evaluation> {
    check_labels(model, data)?;
    let per = exec.map(data, |ex| sample_pass(model, ex, false));
    let mut ce = 0.0;
    let mut correct = 0usize;
    for r in per {
        let (l, c, _) = r?;
        ce += l;
        correct += usize::from(c);
    }
    let n = data.len() as f64;
    let (pen, _) = penalty(&model.store, reg, false)?;
    Ok(Evaluation {
        loss: ce / n + pen,
        accuracy: correct as f64 / n,
    })
}

/// Mean gradient of cross-entropy over `batch`, summed chunkwise in order.
fn batch_gradient(model: &FusionModel, data: &[Example], batch: &[usize], exec: Execution) -> Result<Vec<f64>> {
    let n_values = model.store.num_values();
    let partials = exec.map_chunks(batch, GRAD_CHUNK, |chunk| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; n_values];
        for &i in chunk {
            let (_, _, g) = sample_pass(model, &data[i], true)?;
            for (a, v) in acc.iter_mut().zip(g.expect("gradient requested")) {
                *a += v;
            }
        }
        Ok(acc)
    });
    let mut total = vec![0.0; n_values];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    total.iter_mut().for_each(|t| *t *= inv);
    Ok(total)
}

fn apply_update(store: &mut ParamStore, step: &[f64], lr: f64) {
    let mut k = 0;
    for e in store.entries_mut() {
        for w in e.tensor.data_mut() {
            *w -= lr * step[k];
            k += 1;
        }
    }
}

/// Mini-batch SGD with heavy-ball momentum. Batches are drawn from a
/// per-epoch shuffle seeded by `cfg.seed`, so equal seeds give identical
/// parameters and history under either execution mode.
pub fn train(model: &mut FusionModel, data: &[Example], cfg: &TrainConfig, exec: Execution) -> Result<History> {
    cfg.validate()?;
    check_labels(model, data)?;
    let reg = cfg.regularization();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = vec![0.0; model.store.num_values()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History::default();

    let first = evaluate(model, data, reg, exec)?;
    history.records.push(EpochRecord {
        epoch: 0,
        loss: first.loss,
        accuracy: first.accuracy,
    });

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = batch_gradient(model, data, batch, exec)?;
            if let (_, Some(rg)) = penalty(&model.store, reg, true)? {
                grad.iter_mut().zip(rg).for_each(|(g, r)| *g += r);
            }
            for (v, g) in velocity.iter_mut().zip(&grad) {
                *v = cfg.momentum * *v + g;
            }
            apply_update(&mut model.store, &velocity, cfg.lr);
        }
        let e = evaluate(model, data, reg, exec)?;
        log::debug!("epoch {epoch}: loss {:.6} accuracy {:.4}", e.loss, e.accuracy);
        history.records.push(EpochRecord {
            epoch,
            loss: e.loss,
            accuracy: e.accuracy,
        });
    }
    Ok(history)
}
