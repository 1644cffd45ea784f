use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::imaging::{flip_horizontal, flip_vertical, rotate90};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fusion::WoundClass;
use crate::numerics::Tensor;

/// An image in `[0, 1]` with its metadata and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageItem {
    pub image: Tensor,
    pub label: WoundClass,
    pub location_id: Option<u16>,
    /// Index of the base record this item derives from.
    pub source_id: usize,
    pub transform: Transform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub quarter_turns: u8,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub brightness: f64,
    pub contrast: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        quarter_turns: 0,
        flip_horizontal: false,
        flip_vertical: false,
        brightness: 0.0,
        contrast: 1.0,
    };

    /// Rotation, then flips, then `clamp((v − ½)·contrast + ½ + brightness)`.
    pub fn apply(&self, img: &Tensor) -> Result<Tensor> {
        let mut out = rotate90(img, usize::from(self.quarter_turns))?;
        if self.flip_horizontal {
            out = flip_horizontal(&out)?;
        }
        if self.flip_vertical {
            out = flip_vertical(&out)?;
        }
        let (c, b) = (self.contrast, self.brightness);
        Ok(out.map(|v| ((v - 0.5) * c + 0.5 + b).clamp(0.0, 1.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    /// Candidate rotations in degrees; each must be a multiple of 90.
    pub rotations: Vec<u16>,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Brightness offsets are drawn from `[−delta, delta]`.
    pub brightness_delta: f64,
    /// Contrast factors are drawn log-uniformly from this range.
    pub contrast_range: (f64, f64),
    /// Output size per input record, original included.
    pub multiplier: usize,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            rotations: vec![90, 180, 270],
            flip_horizontal: true,
            flip_vertical: true,
            brightness_delta: 0.1,
            contrast_range: (0.8, 1.25),
            multiplier: 4,
        }
    }
}

impl AugmentationSpec {
    /// No augmentation: every record passes through alone.
    pub fn none() -> Self {
        Self {
            multiplier: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multiplier == 0 {
            return Err(Error::contract("augmentation multiplier must be at least 1"));
        }
        if let Some(r) = self.rotations.iter().find(|r| *r % 90 != 0) {
            return Err(Error::contract(format!("rotation {r}° is not a multiple of 90°")));
        }
        if !(self.brightness_delta >= 0.0 && self.brightness_delta.is_finite()) {
            return Err(Error::contract("brightness_delta must be finite and nonnegative"));
        }
        let (lo, hi) = self.contrast_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::contract(format!("contrast range ({lo}, {hi}) must be positive and ordered")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Transform {
        let quarter_turns = if self.rotations.is_empty() {
            0
        } else {
            ((self.rotations[rng.random_range(0..self.rotations.len())] / 90) % 4) as u8
        };
        let flip_horizontal = self.flip_horizontal && rng.random_bool(0.5);
        let flip_vertical = self.flip_vertical && rng.random_bool(0.5);
        let d = self.brightness_delta;
        let brightness = if d > 0.0 { rng.random_range(-d..=d) } else { 0.0 };
        let (lo, hi) = self.contrast_range;
        let contrast = if hi > lo {
            (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
        } else {
            lo
        };
        Transform {
            quarter_turns,
            flip_horizontal,
            flip_vertical,
            brightness,
            contrast,
        }
    }
}

/// Each item followed by `multiplier − 1` randomly transformed variants.
/// Item `i` draws from its own stream, so output is independent of
/// scheduling.
pub fn augment(items: &[ImageItem], spec: &AugmentationSpec, seed: u64, exec: Execution) -> Result<Vec<ImageItem>> {
    spec.validate()?;
    let groups = exec.map_range(items.len(), |i| -> Result<Vec<ImageItem>> {
        let base = &items[i];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut out = Vec::with_capacity(spec.multiplier);
        out.push(base.clone());
        for _ in 1..spec.multiplier {
            let t = spec.sample(&mut rng);
            out.push(ImageItem {
                image: t.apply(&base.image)?,
                transform: t,
                ..base.clone()
            });
        }
        Ok(out)
    });
    let mut out = Vec::with_capacity(items.len() * spec.multiplier);
    for g in groups {
        out.extend(g?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<ImageItem> {
        (0..n)
            .map(|i| ImageItem {
                image: Tensor::new(&[4, 4, 3], (0..48).map(|v| (v as f64 / 47.0 + i as f64 * 0.01).min(1.0)).collect())
                    .unwrap(),
                label: WoundClass::D,
                location_id: Some(i as u16),
                source_id: i,
                transform: Transform::IDENTITY,
            })
            .collect()
    }

    #[test]
    fn multiplier_one_is_identity() {
        let xs = items(3);
        assert_eq!(augment(&xs, &AugmentationSpec::none(), 1, Execution::Sequential).unwrap(), xs);
    }

    #[test]
    fn counts_ranges_and_provenance() {
        let xs = items(5);
        let spec = AugmentationSpec {
            multiplier: 3,
            brightness_delta: 0.4,
            ..AugmentationSpec::default()
        };
        let out = augment(&xs, &spec, 9, Execution::Parallel).unwrap();
        assert_eq!(out.len(), 15);
        for (k, it) in out.iter().enumerate() {
            assert_eq!(it.source_id, k / 3);
            assert_eq!(it.location_id, Some((k / 3) as u16));
            assert!(it.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(out, augment(&xs, &spec, 9, Execution::Sequential).unwrap());
    }

    #[test]
    fn bad_specs_rejected() {
        let mut s = AugmentationSpec::default();
        s.rotations = vec![45];
        assert!(s.validate().is_err());
        let s = AugmentationSpec {
            multiplier: 0,
            ..AugmentationSpec::default()
        };
        assert!(s.validate().is_err());
    }
}
