//! Experiment configuration, read from TOML.
//!
//! ```toml
//! mode = "image+location"          # image-only | location-only | image+location
//! scheme = ["D", "P", "S", "V"]
//! seed = 7
//! out = "runs/desk"                # relative to this file
//!
//! [data]                           # one of `manifest` or `[data.synthetic]`
//! manifest = "azh/manifest.csv"    # relative to this file
//! root = "azh"                     # image root, defaults to the manifest's folder
//! body_map = "original-484"
//!
//! [model.vit]                      # both model tables default to the desk config
//! [model.loc]
//! [train]                          # lr, batch_size, epochs, l1_reg, l2_reg, momentum
//! [augmentation]
//! [split]
//! [optimizer]                      # required by `tune`
//! [tune]                           # objective = "validation" | "sphere"
//! ```
//!
//! Unknown keys are rejected. The top-level seed is copied into the train and
//! split sections, so their own `seed` keys have no effect.

use std::path::{Path, PathBuf};

use mwe_core::data::{AugmentationSpec, SplitSpec};
use mwe_core::fusion::{ClassScheme, Mode, ModelConfig, TrainConfig};
use mwe_core::location::{BodyMap, LocConfig};
use mwe_core::swarm::OptimizerParams;
use mwe_core::vision::VitConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "MWE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default = "ClassScheme::wound_types")]
    pub scheme: ClassScheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerParams>,
    #[serde(default)]
    pub tune: TuneSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub vit: VitConfig,
    pub loc: LocConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let desk = ModelConfig::desk(Mode::ImageLocation);
        Self {
            vit: desk.vit,
            loc: desk.loc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default = "default_map")]
    pub body_map: BodyMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
}

fn default_map() -> BodyMap {
    BodyMap::Original484
}

/// In-memory synthetic set at the model's image size, seeded by the
/// experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub per_class: usize,
    pub noise: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            per_class: 8,
            noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// `1 − macro-F1` on the validation split.
    #[default]
    Validation,
    /// Sphere function over `[−5, 5]^sphere_dim`; exercises the search
    /// plumbing without training.
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub objective: Objective,
    pub sphere_dim: usize,
    /// Seven `[low, high]` pairs overriding the standard search ranges.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranges: Option<Vec<(f64, f64)>>,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            objective: Objective::Validation,
            sphere_dim: 5,
            ranges: None,
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            vit: self.model.vit,
            loc: self.model.loc,
        }
    }

    /// Cross-section checks, all reported as config errors.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: mwe_core::Error| CliError::Config(e.to_string());
        self.model_config().validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        self.split.validate().map_err(cfg)?;
        self.augmentation.validate().map_err(cfg)?;
        if let Some(o) = &self.optimizer {
            o.validate().map_err(cfg)?;
        }
        if let Some(d) = &self.data {
            match (&d.manifest, &d.synthetic) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Config(
                        "data: give either `manifest` or `[data.synthetic]`, not both".into(),
                    ))
                }
                (None, None) => {
                    return Err(CliError::Config(
                        "data: one of `manifest` or `[data.synthetic]` is required".into(),
                    ))
                }
                _ => {}
            }
            if let Some(s) = &d.synthetic {
                if s.per_class == 0 || !(s.noise >= 0.0) {
                    return Err(CliError::Config(
                        "data.synthetic: per_class must be positive and noise nonnegative".into(),
                    ));
                }
            }
        }
        if let Some(r) = &self.tune.ranges {
            if r.len() != mwe_core::swarm::DIM {
                return Err(CliError::Config(format!(
                    "tune.ranges: expected {} [low, high] pairs, got {}",
                    mwe_core::swarm::DIM,
                    r.len()
                )));
            }
        }
        if self.tune.sphere_dim == 0 {
            return Err(CliError::Config("tune.sphere_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, validates it, and resolves relative paths against its folder.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.out = base.join(&cfg.out);
        if let Some(d) = &mut cfg.data {
            d.manifest = d.manifest.as_ref().map(|m| base.join(m));
            d.root = d.root.as_ref().map(|r| base.join(r));
        }
        Ok(cfg)
    }

    /// Applies the seed precedence and copies the result into the sections
    /// that carry their own seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.split.seed = seed;
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// `--seed` beats `MWE_SEED`, which beats the config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        None => Ok(config),
    }
}
