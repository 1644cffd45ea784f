//! Position codec for the seven tuned training hyperparameters.
//!
//! Coordinates, in order: `filters_size`, `kernel_size`, `lr`, `l2_reg`,
//! `l1_reg`, `batch_size`, `epochs`. The three rates are searched on a
//! natural-log axis; the rest on their own integer axes. `filters_size`
//! becomes the embedding width of the tuned branch (rounded to a multiple of
//! its head count) and `kernel_size` the ViT patch size (rounded to a
//! divisor of the image side that the wavelet block also divides).

use serde::{Deserialize, Serialize};

use super::Bounds;
use crate::error::{Error, Result};
use crate::fusion::{ModelConfig, TrainConfig};

pub const DIM: usize = 7;
const NAMES: [&str; DIM] = ["filters_size", "kernel_size", "lr", "l2_reg", "l1_reg", "batch_size", "epochs"];
const LOG_AXES: [bool; DIM] = [false, false, true, true, true, false, false];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Embedding width after rounding to a multiple of the head count.
    pub embed_dim: usize,
    pub patch_size: usize,
    pub lr: f64,
    pub l2_reg: f64,
    pub l1_reg: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Hyperparams {
    /// Exact identity of a decoded configuration, for caching.
    pub fn key(&self) -> [u64; DIM] {
        [
            self.embed_dim as u64,
            self.patch_size as u64,
            self.lr.to_bits(),
            self.l2_reg.to_bits(),
            self.l1_reg.to_bits(),
            self.batch_size as u64,
            self.epochs as u64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSpace {
    /// Value ranges per coordinate, in natural units.
    pub ranges: [(f64, f64); DIM],
    pub heads: usize,
    pub image_size: usize,
    /// Every admissible patch size is a multiple of this (the wavelet block).
    pub patch_multiple: usize,
}

impl HyperSpace {
    /// Standard search ranges, with head count and patch constraints taken from `model`.
    pub fn standard(model: &ModelConfig) -> Self {
        Self::with_ranges(
            [
                (32.0, 256.0),
                (3.0, 9.0),
                (1e-5, 1e-2),
                (1e-5, 1e-2),
                (1e-5, 1e-2),
                (32.0, 128.0),
                (10.0, 100.0),
            ],
            model,
        )
    }

    pub fn with_ranges(ranges: [(f64, f64); DIM], model: &ModelConfig) -> Self {
        let heads = if model.mode.uses_image() {
            model.vit.heads
        } else {
            model.loc.heads
        };
        Self {
            ranges,
            heads,
            image_size: model.vit.patch.image_size,
            patch_multiple: model.vit.wavelet.map_or(1, |w| w.block()),
        }
    }

    pub fn bounds(&self) -> Result<Bounds> {
        let mut lower = Vec::with_capacity(DIM);
        let mut upper = Vec::with_capacity(DIM);
        for (d, &(lo, hi)) in self.ranges.iter().enumerate() {
            if LOG_AXES[d] {
                if lo <= 0.0 {
                    return Err(Error::contract(format!("{} range must be positive", NAMES[d])));
                }
                lower.push(lo.ln());
                upper.push(hi.ln());
            } else {
                lower.push(lo);
                upper.push(hi);
            }
        }
        Bounds::with_integer(lower, upper, LOG_AXES.iter().map(|l| !l).collect())
    }

    fn log_value(&self, d: usize, x: f64, bounds: &Bounds) -> f64 {
        let (lo, hi) = self.ranges[d];
        if x <= bounds.lower()[d] {
            lo
        } else if x >= bounds.upper()[d] {
            hi
        } else {
            x.exp().clamp(lo, hi)
        }
    }

    fn int_value(&self, d: usize, x: f64) -> usize {
        let (lo, hi) = self.ranges[d];
        x.round().clamp(lo.ceil(), hi.floor()) as usize
    }

    /// Nearest multiple of the head count to `x` within the filters range;
    /// ties go to the larger width.
    fn embed_dim(&self, x: f64) -> Result<usize> {
        let (lo, hi) = self.ranges[0];
        let h = self.heads.max(1);
        let first = (lo / h as f64).ceil() as usize * h;
        let options: Vec<usize> = (first..=hi.floor() as usize).step_by(h).collect();
        nearest(&options, x).ok_or_else(|| {
            Error::contract(format!("no multiple of {h} heads inside filters_size range [{lo}, {hi}]"))
        })
    }

    /// Admissible patch sides: divisors of the image side that are multiples
    /// of `patch_multiple`.
    pub fn patch_options(&self) -> Vec<usize> {
        (1..=self.image_size)
            .filter(|p| self.image_size.is_multiple_of(*p) && p % self.patch_multiple == 0)
            .collect()
    }

    pub fn decode(&self, position: &[f64]) -> Result<Hyperparams> {
        let bounds = self.bounds()?;
        if !bounds.contains(position) {
            return Err(Error::contract(format!("position {position:?} lies outside the search box")));
        }
        let kernel = self.int_value(1, position[1]);
        let patch_size = nearest(&self.patch_options(), kernel as f64).ok_or_else(|| {
            Error::contract(format!(
                "no patch size divides image side {} in steps of {}",
                self.image_size, self.patch_multiple
            ))
        })?;
        Ok(Hyperparams {
            embed_dim: self.embed_dim(self.int_value(0, position[0]) as f64)?,
            patch_size,
            lr: self.log_value(2, position[2], &bounds),
            l2_reg: self.log_value(3, position[3], &bounds),
            l1_reg: self.log_value(4, position[4], &bounds),
            batch_size: self.int_value(5, position[5]),
            epochs: self.int_value(6, position[6]),
        })
    }

    /// The position whose coordinates carry these values, clamped into the box.
    pub fn encode(&self, values: &[f64; DIM]) -> Result<Vec<f64>> {
        let bounds = self.bounds()?;
        let mut x: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(d, &v)| if LOG_AXES[d] { v.max(f64::MIN_POSITIVE).ln() } else { v })
            .collect();
        bounds.clamp(&mut x);
        Ok(x)
    }

    /// Position of an existing model and training configuration.
    pub fn encode_config(&self, model: &ModelConfig, train: &TrainConfig) -> Result<Vec<f64>> {
        let width = if model.mode.uses_image() {
            model.vit.patch.embed_dim
        } else {
            model.loc.d_model
        };
        self.encode(&[
            width as f64,
            model.vit.patch.patch_size as f64,
            train.lr,
            train.l2_reg,
            train.l1_reg,
            train.batch_size as f64,
            train.epochs as f64,
        ])
    }

    /// Writes decoded values into copies of the base configurations.
    pub fn apply(&self, h: &Hyperparams, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut m = *model;
        if m.mode.uses_image() {
            m.vit.patch.embed_dim = h.embed_dim;
            m.vit.patch.patch_size = h.patch_size;
        } else {
            m.loc.d_model = h.embed_dim;
        }
        let t = TrainConfig {
            lr: h.lr,
            l1_reg: h.l1_reg,
            l2_reg: h.l2_reg,
            batch_size: h.batch_size,
            epochs: h.epochs,
            ..*train
        };
        (m, t)
    }
}

/// Option closest to `x`, preferring the larger on ties.
fn nearest(options: &[usize], x: f64) -> Option<usize> {
    options.iter().copied().fold(None, |best, o| match best {
        None => Some(o),
        Some(b) => {
            let (db, do_) = ((b as f64 - x).abs(), (o as f64 - x).abs());
            if do_ < db || (do_ == db && o > b) {
                Some(o)
            } else {
                Some(b)
            }
        }
    })
}
