use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassScheme;
use crate::error::{Error, Result};
use crate::location::{location_forward, LocConfig, LocParams, LocationCode};
use crate::numerics::{Graph, ParamKind, ParamStore, Tensor, Var};
use crate::transformer::Linear;
use crate::vision::{image_tokens, vit_forward_tokens, PatchConfig, ViTParams, VitConfig, WaveletMode};
use crate::wavelet::WaveletSpec;

/// Which branches feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "image-only")]
    ImageOnly,
    #[serde(rename = "location-only")]
    LocationOnly,
    #[serde(rename = "image+location")]
    ImageLocation,
}

impl Mode {
    pub fn uses_image(self) -> bool {
        matches!(self, Mode::ImageOnly | Mode::ImageLocation)
    }

    pub fn uses_location(self) -> bool {
        matches!(self, Mode::LocationOnly | Mode::ImageLocation)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::ImageOnly => "image-only",
            Mode::LocationOnly => "location-only",
            Mode::ImageLocation => "image+location",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Mode::ImageOnly, Mode::LocationOnly, Mode::ImageLocation]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    pub vit: VitConfig,
    pub loc: LocConfig,
}

impl ModelConfig {
    /// Laptop-sized defaults: 32×32 RGB, P=4, D=64, depth 4, 4 heads, one
    /// Haar level; location branch d_model=32, depth 2, 4 heads.
    pub fn desk(mode: Mode) -> Self {
        Self {
            mode,
            vit: VitConfig {
                patch: PatchConfig {
                    image_size: 32,
                    patch_size: 4,
                    channels: 3,
                    embed_dim: 64,
                },
                depth: 4,
                heads: 4,
                mlp_ratio: 4,
                wavelet: Some(WaveletSpec::default()),
                wavelet_mode: WaveletMode::Concat,
            },
            loc: LocConfig {
                d_model: 32,
                depth: 2,
                heads: 4,
                mlp_ratio: 4,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode.uses_image() {
            self.vit.validate()?;
        }
        if self.mode.uses_location() {
            self.loc.validate()?;
        }
        Ok(())
    }

    /// Classifier input width: the sum of the active latent widths.
    pub fn latent_width(&self) -> usize {
        let mut w = 0;
        if self.mode.uses_image() {
            w += self.vit.patch.embed_dim;
        }
        if self.mode.uses_location() {
            w += self.loc.d_model;
        }
        w
    }
}

/// Both branches plus the linear classifier over their concatenated latents.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub scheme: ClassScheme,
    pub store: ParamStore,
    pub vit: Option<ViTParams>,
    pub loc: Option<LocParams>,
    pub classifier: Linear,
}

/// Model input with the image already turned into token rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub tokens: Option<Tensor>,
    pub location: Option<LocationCode>,
}

/// `Final_vector = Vit_latent ⊕ Transformer_latent`, image latent first.
pub fn fuse(g: &mut Graph<'_>, vit_latent: Var, loc_latent: Var) -> Result<Var> {
    if g.value(vit_latent).rows() != 1 || g.value(loc_latent).rows() != 1 {
        return Err(Error::Shape {
            op: "fuse",
            left: g.value(vit_latent).shape().to_vec(),
            right: g.value(loc_latent).shape().to_vec(),
        });
    }
    g.hcat(&[vit_latent, loc_latent])
}

impl FusionModel {
    pub fn new(config: ModelConfig, scheme: ClassScheme, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let vit = config
            .mode
            .uses_image()
            .then(|| ViTParams::init(&mut store, config.vit, &mut rng))
            .transpose()?;
        let loc = config
            .mode
            .uses_location()
            .then(|| LocParams::init(&mut store, config.loc, &mut rng))
            .transpose()?;
        let classifier = Linear::init(&mut store, "classifier", config.latent_width(), scheme.k(), &mut rng);
        Ok(Self {
            config,
            scheme,
            store,
            vit,
            loc,
            classifier,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn k(&self) -> usize {
        self.scheme.k()
    }

    /// Precomputes the image token rows so repeated forwards skip
    /// patchification and the wavelet transform.
    pub fn prepare(&self, image: Option<&Tensor>, location: Option<&LocationCode>) -> Result<PreparedInput> {
        let tokens = match (self.mode().uses_image(), image) {
            (true, Some(img)) => Some(image_tokens(img, &self.config.vit)?),
            (true, None) => {
                return Err(Error::contract(format!("mode {} needs an image", self.mode())))
            }
            (false, _) => None,
        };
        let location = match (self.mode().uses_location(), location) {
            (true, Some(c)) => Some(*c),
            (true, None) => {
                return Err(Error::contract(format!("mode {} needs a location", self.mode())))
            }
            (false, _) => None,
        };
        Ok(PreparedInput { tokens, location })
    }

    /// Logits as a `1×k` row.
    pub fn forward(&self, g: &mut Graph<'_>, image: Option<&Tensor>, location: Option<&LocationCode>) -> Result<Var> {
        let input = self.prepare(image, location)?;
        self.forward_prepared(g, &input)
    }

    pub fn forward_prepared(&self, g: &mut Graph<'_>, input: &PreparedInput) -> Result<Var> {
        let vit_latent = match (&self.vit, &input.tokens) {
            (Some(p), Some(t)) => Some(vit_forward_tokens(g, t, p)?),
            (Some(_), None) => return Err(Error::contract("image branch active but no image tokens given")),
            (None, _) => None,
        };
        let loc_latent = match (&self.loc, &input.location) {
            (Some(p), Some(c)) => Some(location_forward(g, c, p)?),
            (Some(_), None) => return Err(Error::contract("location branch active but no location given")),
            (None, _) => None,
        };
        let features = match (vit_latent, loc_latent) {
            (Some(v), Some(t)) => fuse(g, v, t)?,
            (Some(v), None) => v,
            (None, Some(t)) => t,
            (None, None) => unreachable!("every mode has a branch"),
        };
        self.classifier.forward(g, features)
    }
}

/// Elastic-net penalties on [`ParamKind::Weight`] tensors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Regularization {
    pub l1: f64,
    pub l2: f64,
}

/// `l1·Σ|w| + l2·Σw²` over every weight tensor bound to `g`; `None` when
/// both coefficients are zero.
pub fn regularization(g: &mut Graph<'_>, store: &ParamStore, reg: Regularization) -> Result<Option<Var>> {
    if reg.l1 == 0.0 && reg.l2 == 0.0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (i, entry) in store.entries().iter().enumerate() {
        if entry.kind != ParamKind::Weight {
            continue;
        }
        let w = g.param(crate::numerics::ParamId(i));
        let mut terms = Vec::new();
        if reg.l1 != 0.0 {
            let a = g.sum_abs(w)?;
            terms.push(g.scale(a, reg.l1)?);
        }
        if reg.l2 != 0.0 {
            let s = g.sum_sq(w)?;
            terms.push(g.scale(s, reg.l2)?);
        }
        for t in terms {
            total = Some(match total {
                Some(acc) => g.add(acc, t)?,
                None => t,
            });
        }
    }
    Ok(total)
}

/// Softmax cross-entropy of `logits` against `label`, plus regularization.
pub fn loss(
    g: &mut Graph<'_>,
    logits: Var,
    label: usize,
    store: &ParamStore,
    reg: Regularization,
) -> Result<Var> {
    let ce = g.cross_entropy(logits, label)?;
    match regularization(g, store, reg)? {
        Some(r) => g.add(ce, r),
        None => Ok(ce),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// Argmax with ties going to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_logits(logits: &[f64]) -> Prediction {
    let t = Tensor::vector(logits.to_vec());
    let probabilities = crate::numerics::softmax(&t, 0).expect("rank-1").into_data();
    Prediction {
        class: argmax(logits),
        probabilities,
    }
}

impl FusionModel {
    pub fn predict_one(&self, input: &PreparedInput) -> Result<Prediction> {
        let mut g = Graph::with_params(&self.store);
        let logits = self.forward_prepared(&mut g, input)?;
        Ok(predict_logits(g.value(logits).data()))
    }

    pub fn predict(&self, batch: &[PreparedInput], exec: crate::exec::Execution) -> Result<Vec<Prediction>> {
        exec.map(batch, |x| self.predict_one(x)).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::WoundClass;
    use rand::Rng;

    fn tiny(mode: Mode) -> ModelConfig {
        let mut c = ModelConfig::desk(mode);
        c.vit.patch = PatchConfig::new(8, 4, 3, 8).unwrap();
        c.vit.depth = 1;
        c.vit.heads = 2;
        c.loc = LocConfig {
            d_model: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
        };
        c
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[8, 8, 3], (0..192).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn fuse_concatenates_image_first() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::zeros(&[1, 64]));
        let t = g.constant(Tensor::matrix(1, 32, (0..32).map(f64::from).collect()).unwrap());
        let f = fuse(&mut g, v, t).unwrap();
        let out = g.value(f);
        assert_eq!(out.len(), 96);
        assert!(out.data()[..64].iter().all(|&x| x == 0.0));
        assert_eq!(&out.data()[64..], g.value(t).data());
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let mut m = FusionModel::new(tiny(Mode::ImageLocation), ClassScheme::wound_types(), 1).unwrap();
        m.store.fill(0.0);
        let input = m.prepare(Some(&image(1)), Some(&LocationCode::from_id(9).unwrap())).unwrap();
        let p = m.predict_one(&input).unwrap();
        assert_eq!(p.class, 0);
        assert!(p.probabilities.iter().all(|&q| (q - 0.25).abs() < 1e-15));
    }

    #[test]
    fn modes_ignore_the_other_modality() {
        let img = image(2);
        let code = LocationCode::from_id(300).unwrap();
        let other = LocationCode::from_id(12).unwrap();
        let m = FusionModel::new(tiny(Mode::ImageOnly), ClassScheme::wound_types(), 2).unwrap();
        let mut g = Graph::with_params(&m.store);
        let a = m.forward(&mut g, Some(&img), Some(&code)).unwrap();
        let b = m.forward(&mut g, Some(&img), None).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert!(m.forward(&mut g, None, Some(&code)).is_err());

        let m = FusionModel::new(tiny(Mode::LocationOnly), ClassScheme::wound_types(), 2).unwrap();
        let mut g = Graph::with_params(&m.store);
        let a = m.forward(&mut g, Some(&img), Some(&code)).unwrap();
        let b = m.forward(&mut g, Some(&image(3)), Some(&code)).unwrap();
        let c = m.forward(&mut g, Some(&img), Some(&other)).unwrap();
        assert_eq!(g.value(a), g.value(b));
        assert_ne!(g.value(a), g.value(c));
        assert!(m.forward(&mut g, Some(&img), None).is_err());
    }

    #[test]
    fn classifier_width_follows_mode() {
        for (mode, w) in [(Mode::ImageOnly, 8), (Mode::LocationOnly, 8), (Mode::ImageLocation, 16)] {
            let m = FusionModel::new(tiny(mode), ClassScheme::full(), 0).unwrap();
            assert_eq!(m.store.get(m.classifier.weight).shape(), &[w, 6]);
            assert_eq!(m.vit.is_some(), mode.uses_image());
            assert_eq!(m.loc.is_some(), mode.uses_location());
        }
    }

    #[test]
    fn uniform_logit_loss_is_ln_k() {
        let store = ParamStore::new();
        let mut g = Graph::with_params(&store);
        let l = g.constant(Tensor::zeros(&[1, 4]));
        let v = loss(&mut g, l, 2, &store, Regularization::default()).unwrap();
        assert!((g.value(v).item() - 4f64.ln()).abs() < 1e-15);
        let dominant = g.constant(Tensor::from_rows(&[vec![0.0, 60.0, 0.0]]).unwrap());
        let v = loss(&mut g, dominant, 1, &store, Regularization::default()).unwrap();
        assert!(g.value(v).item() < 1e-25);
        assert!(loss(&mut g, l, 4, &store, Regularization::default()).is_err());
    }

    #[test]
    fn regularization_skips_biases_and_norms() {
        let m = FusionModel::new(tiny(Mode::LocationOnly), ClassScheme::wound_types(), 5).unwrap();
        let reg = Regularization { l1: 0.01, l2: 0.1 };
        let mut g = Graph::with_params(&m.store);
        let r = regularization(&mut g, &m.store, reg).unwrap().unwrap();
        let expect: f64 = m
            .store
            .entries()
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .flat_map(|e| e.tensor.data())
            .map(|w| 0.01 * w.abs() + 0.1 * w * w)
            .sum();
        assert!((g.value(r).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        let p = predict_logits(&[0.3, -1.0, 2.0]);
        assert_eq!(p.class, 2);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scheme_sets_output_width() {
        let s = ClassScheme::new(&[WoundClass::D, WoundClass::V]).unwrap();
        let m = FusionModel::new(tiny(Mode::ImageOnly), s, 0).unwrap();
        assert_eq!(m.k(), 2);
    }
}
