use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{ImageItem, Transform};
use super::imaging::save_png;
use crate::error::{Error, Result};
use crate::fusion::{ClassScheme, WoundClass};
use crate::numerics::Tensor;

/// Distinct base colours, indexed by canonical class position.
const PALETTE: [[f64; 3]; 6] = [
    [0.80, 0.25, 0.25],
    [0.25, 0.75, 0.30],
    [0.25, 0.30, 0.80],
    [0.80, 0.75, 0.20],
    [0.70, 0.30, 0.75],
    [0.30, 0.75, 0.75],
];

/// Generator for a small labelled set in which both modalities carry the
/// class: each image is its class colour plus a class-oriented stripe and
/// pixel noise, and each location id falls in the class's own block of 64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub scheme: ClassScheme,
    pub per_class: usize,
    pub image_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            scheme: ClassScheme::wound_types(),
            per_class: 8,
            image_size: 32,
            noise: 0.05,
            seed: 0,
        }
    }
}

fn class_position(c: WoundClass) -> usize {
    WoundClass::ALL.iter().position(|&x| x == c).expect("listed")
}

pub fn synthetic_items(spec: &SyntheticSpec) -> Result<Vec<ImageItem>> {
    if spec.per_class == 0 || spec.image_size == 0 {
        return Err(Error::contract("synthetic set needs per_class and image_size > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.image_size;
    let mut items = Vec::with_capacity(spec.per_class * spec.scheme.k());
    for _ in 0..spec.per_class {
        for &class in spec.scheme.classes() {
            let p = class_position(class);
            let color = PALETTE[p];
            let mut data = Vec::with_capacity(s * s * 3);
            for y in 0..s {
                for x in 0..s {
                    // Stripe direction rotates with the class.
                    let phase = match p % 3 {
                        0 => x,
                        1 => y,
                        _ => x + y,
                    };
                    let stripe = if (phase / 2) % 2 == 0 { 0.1 } else { -0.1 };
                    for &base in &color {
                        let n: f64 = rng.random_range(-1.0..=1.0) * spec.noise;
                        data.push((base + stripe + n).clamp(0.0, 1.0));
                    }
                }
            }
            let location_id = (p * 64 + rng.random_range(0..64)) as u16;
            items.push(ImageItem {
                image: Tensor::new(&[s, s, 3], data)?,
                label: class,
                location_id: Some(location_id),
                source_id: items.len(),
                transform: Transform::IDENTITY,
            });
        }
    }
    Ok(items)
}

/// Writes the synthetic set as PNG files plus `manifest.csv` under `dir`,
/// returning the manifest path.
pub fn write_synthetic(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images"))?;
    let items = synthetic_items(spec)?;
    let manifest = dir.join("manifest.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&manifest)?);
    writeln!(f, "image_path,label,location_id")?;
    for (i, it) in items.iter().enumerate() {
        let rel = format!("images/{i:04}_{}.png", it.label);
        save_png(&it.image, &dir.join(&rel))?;
        let loc = it.location_id.map(|l| l.to_string()).unwrap_or_default();
        writeln!(f, "{rel},{},{loc}", it.label)?;
    }
    f.flush()?;
    Ok(manifest)
}
