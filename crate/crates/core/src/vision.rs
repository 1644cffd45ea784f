//! ViT image branch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::transformer::{encoder_stack, AttentionConfig, EncoderLayerParams, Norm};
use crate::wavelet::{wavelet_patch_features, WaveletSpec};

/// Patch geometry of a square image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
}

impl PatchConfig {
    pub fn new(image_size: usize, patch_size: usize, channels: usize, embed_dim: usize) -> Result<Self> {
        let cfg = Self {
            image_size,
            patch_size,
            channels,
            embed_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.channels == 0 || self.embed_dim == 0 {
            return Err(Error::contract("patch size, channels and embed dim must be positive"));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::contract(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_count(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Flattened patch length `P²·C`.
    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Width of the per-patch wavelet feature row; every coefficient of an
    /// orthonormal transform maps to exactly one patch, so this equals `P²·C`.
    pub fn wavelet_width(&self) -> usize {
        self.patch_len()
    }

    pub fn check_image(&self, image: &Tensor) -> Result<()> {
        let expect = [self.image_size, self.image_size, self.channels];
        if image.shape() != expect {
            return Err(Error::Shape {
                op: "patchify",
                left: image.shape().to_vec(),
                right: expect.to_vec(),
            });
        }
        Ok(())
    }
}

/// How wavelet coefficients enter the token rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletMode {
    /// Raw patch pixels followed by the co-located coefficients.
    #[default]
    Concat,
    /// Coefficients only.
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub patch: PatchConfig,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub wavelet: Option<WaveletSpec>,
    pub wavelet_mode: WaveletMode,
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        AttentionConfig::new(self.patch.embed_dim, self.heads)?;
        if self.depth == 0 || self.mlp_ratio == 0 {
            return Err(Error::contract("ViT depth and mlp ratio must be positive"));
        }
        if let Some(w) = &self.wavelet {
            w.check_dims(self.patch.image_size, self.patch.image_size)?;
            if !self.patch.patch_size.is_multiple_of(w.block()) {
                return Err(Error::contract(format!(
                    "patch size {} must be a multiple of {} for a {}-level wavelet",
                    self.patch.patch_size,
                    w.block(),
                    w.levels
                )));
            }
        }
        Ok(())
    }

    /// Width of a token row before the embedding projection.
    pub fn token_width(&self) -> usize {
        match (self.wavelet, self.wavelet_mode) {
            (None, _) => self.patch.patch_len(),
            (Some(_), WaveletMode::Concat) => self.patch.patch_len() + self.patch.wavelet_width(),
            (Some(_), WaveletMode::Replace) => self.patch.wavelet_width(),
        }
    }

    /// Sequence length seen by the encoder (patches plus class token).
    pub fn sequence_len(&self) -> usize {
        self.patch.patch_count() + 1
    }
}

/// Row `i` is patch `i` (row-major over the grid) flattened row-major as (y, x, c).
pub fn patchify(image: &Tensor, cfg: &PatchConfig) -> Result<Tensor> {
    cfg.check_image(image)?;
    let (s, p, c) = (cfg.image_size, cfg.patch_size, cfg.channels);
    let grid = cfg.grid();
    let mut data = Vec::with_capacity(image.len());
    for gr in 0..grid {
        for gc in 0..grid {
            for y in gr * p..(gr + 1) * p {
                let start = (y * s + gc * p) * c;
                data.extend_from_slice(&image.data()[start..start + p * c]);
            }
        }
    }
    Tensor::new(&[cfg.patch_count(), cfg.patch_len()], data)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, cfg: &PatchConfig) -> Result<Tensor> {
    if patches.shape() != [cfg.patch_count(), cfg.patch_len()] {
        return Err(Error::Shape {
            op: "unpatchify",
            left: patches.shape().to_vec(),
            right: vec![cfg.patch_count(), cfg.patch_len()],
        });
    }
    let (s, p, c) = (cfg.image_size, cfg.patch_size, cfg.channels);
    let grid = cfg.grid();
    let mut data = vec![0.0; s * s * c];
    for (i, row) in patches.data().chunks(cfg.patch_len()).enumerate() {
        let (gr, gc) = (i / grid, i % grid);
        for (dy, line) in row.chunks(p * c).enumerate() {
            let start = ((gr * p + dy) * s + gc * p) * c;
            data[start..start + p * c].copy_from_slice(line);
        }
    }
    Tensor::new(&[s, s, c], data)
}

/// Token rows fed to the embedding projection for one image.
pub fn image_tokens(image: &Tensor, cfg: &VitConfig) -> Result<Tensor> {
    let patches = patchify(image, &cfg.patch)?;
    let Some(spec) = &cfg.wavelet else {
        return Ok(patches);
    };
    let feats = wavelet_patch_features(image, &cfg.patch, spec)?;
    match cfg.wavelet_mode {
        WaveletMode::Replace => Ok(feats),
        WaveletMode::Concat => {
            let n = cfg.patch.patch_count();
            let mut data = Vec::with_capacity(n * cfg.token_width());
            for i in 0..n {
                data.extend_from_slice(patches.row(i));
                data.extend_from_slice(feats.row(i));
            }
            Tensor::new(&[n, cfg.token_width()], data)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViTParams {
    pub config: VitConfig,
    /// `E`: `[token_width × D]`.
    pub embedding: ParamId,
    /// `E_pos`: `[(N+1) × D]`.
    pub positions: ParamId,
    pub class_token: ParamId,
    pub layers: Vec<EncoderLayerParams>,
    pub norm: Norm,
}

impl ViTParams {
    pub fn init(store: &mut ParamStore, config: VitConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.patch.embed_dim;
        let width = config.token_width();
        let embedding = store.add_normal("vit.embed", &[width, d], (2.0 / (width + d) as f64).sqrt(), rng);
        let positions = store.add_normal("vit.pos", &[config.sequence_len(), d], 0.02, rng);
        let class_token = store.add_normal("vit.cls", &[1, d], 0.02, rng);
        let attn = AttentionConfig::new(d, config.heads)?;
        let layers = (0..config.depth)
            .map(|i| EncoderLayerParams::init(store, &format!("vit.layer{i}"), attn, config.mlp_ratio, rng))
            .collect();
        let norm = Norm::init(store, "vit.norm", d);
        Ok(Self {
            config,
            embedding,
            positions,
            class_token,
            layers,
            norm,
        })
    }
}

/// `z₀ = [x_class; x_p¹E; …; x_pᴺE] + E_pos`, with optional wavelet columns
/// appended to each patch row before projection.
pub fn embed(g: &mut Graph<'_>, patches: Var, wavelet: Option<Var>, p: &ViTParams) -> Result<Var> {
    let tokens = match wavelet {
        Some(w) => g.hcat(&[patches, w])?,
        None => patches,
    };
    let e = g.param(p.embedding);
    if g.value(tokens).cols() != g.value(e).rows() {
        return Err(Error::Shape {
            op: "embed",
            left: g.value(tokens).shape().to_vec(),
            right: g.value(e).shape().to_vec(),
        });
    }
    let projected = g.matmul(tokens, e)?;
    let cls = g.param(p.class_token);
    let seq = g.vcat(&[cls, projected])?;
    let pos = g.param(p.positions);
    g.add(seq, pos)
}

/// Class-token readout from precomputed token rows (see [`image_tokens`]).
pub fn vit_forward_tokens(g: &mut Graph<'_>, tokens: &Tensor, p: &ViTParams) -> Result<Var> {
    let t = g.constant(tokens.clone());
    let z0 = embed(g, t, None, p)?;
    let z = encoder_stack(g, z0, &p.layers)?;
    let normed = p.norm.forward(g, z)?;
    g.rows(normed, 0, 1)
}

/// `Vit_latent` of one image: a `1×D` row.
pub fn vit_forward(g: &mut Graph<'_>, image: &Tensor, p: &ViTParams) -> Result<Var> {
    let tokens = image_tokens(image, &p.config)?;
    vit_forward_tokens(g, &tokens, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(wavelet: Option<WaveletSpec>) -> VitConfig {
        VitConfig {
            patch: PatchConfig::new(16, 4, 3, 16).unwrap(),
            depth: 2,
            heads: 2,
            mlp_ratio: 4,
            wavelet,
            wavelet_mode: WaveletMode::Concat,
        }
    }

    fn random_image(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[16, 16, 3], (0..768).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn patchify_shape_and_first_patch() {
        let c = PatchConfig::new(16, 4, 1, 8).unwrap();
        let mut img = Tensor::zeros(&[16, 16, 1]);
        for y in 0..4 {
            for x in 0..4 {
                img.data_mut()[y * 16 + x] = 7.0;
            }
        }
        let p = patchify(&img, &c).unwrap();
        assert_eq!(p.shape(), &[16, 16]);
        assert!(p.row(0).iter().all(|&v| v == 7.0));
        assert!(p.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unpatchify_inverts() {
        let c = PatchConfig::new(16, 4, 3, 8).unwrap();
        let img = random_image(1);
        assert_eq!(unpatchify(&patchify(&img, &c).unwrap(), &c).unwrap(), img);
    }

    #[test]
    fn divisibility_is_checked() {
        assert!(PatchConfig::new(15, 4, 3, 8).is_err());
        let c = PatchConfig::new(16, 4, 3, 8).unwrap();
        assert!(patchify(&Tensor::zeros(&[12, 12, 3]), &c).is_err());
    }

    #[test]
    fn zero_params_embed_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let p = ViTParams::init(&mut store, cfg(None), &mut rng).unwrap();
        store.fill(0.0);
        let mut g = Graph::with_params(&store);
        let tokens = g.constant(patchify(&random_image(2), &p.config.patch).unwrap());
        let z0 = embed(&mut g, tokens, None, &p).unwrap();
        assert_eq!(g.value(z0).shape(), &[17, 16]);
        assert!(g.value(z0).data().iter().all(|&v| v == 0.0));
        let latent = vit_forward(&mut g, &random_image(2), &p).unwrap();
        assert!(g.value(latent).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_patch_identity_embedding() {
        let c = VitConfig {
            patch: PatchConfig::new(2, 2, 1, 4).unwrap(),
            depth: 1,
            heads: 1,
            mlp_ratio: 1,
            wavelet: None,
            wavelet_mode: WaveletMode::Concat,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let p = ViTParams::init(&mut store, c, &mut rng).unwrap();
        *store.get_mut(p.embedding) = Tensor::identity(4);
        let img = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut g = Graph::with_params(&store);
        let t = g.constant(patchify(&img, &c.patch).unwrap());
        let z0 = embed(&mut g, t, None, &p).unwrap();
        let pos = store.get(p.positions);
        for j in 0..4 {
            assert!((g.value(z0).at(1, j) - (img.data()[j] + pos.at(1, j))).abs() < 1e-15);
        }
    }

    #[test]
    fn augmented_width_and_mismatch() {
        let c = cfg(Some(WaveletSpec::default()));
        assert_eq!(c.token_width(), 96);
        let replace = VitConfig { wavelet_mode: WaveletMode::Replace, ..c };
        assert_eq!(replace.token_width(), 48);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let p = ViTParams::init(&mut store, c, &mut rng).unwrap();
        assert_eq!(store.get(p.embedding).shape(), &[96, 16]);
        let mut g = Graph::with_params(&store);
        let patches = g.constant(Tensor::zeros(&[16, 48]));
        let feats = g.constant(Tensor::zeros(&[16, 48]));
        let z0 = embed(&mut g, patches, Some(feats), &p).unwrap();
        assert_eq!(g.value(z0).shape(), &[17, 16]);
        assert!(matches!(embed(&mut g, patches, None, &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn latent_has_width_d_and_sees_every_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let p = ViTParams::init(&mut store, cfg(Some(WaveletSpec::default())), &mut rng).unwrap();
        store.get_mut(p.positions).fill(0.0);
        let img = random_image(7);
        let mut g = Graph::with_params(&store);
        let a = vit_forward(&mut g, &img, &p).unwrap();
        assert_eq!(g.value(a).shape(), &[1, 16]);
        // swap two patches
        let c = p.config.patch;
        let mut patches = patchify(&img, &c).unwrap();
        let (r0, r5) = (patches.row(0).to_vec(), patches.row(5).to_vec());
        let w = c.patch_len();
        patches.data_mut()[..w].copy_from_slice(&r5);
        patches.data_mut()[5 * w..6 * w].copy_from_slice(&r0);
        let swapped = unpatchify(&patches, &c).unwrap();
        let b = vit_forward(&mut g, &swapped, &p).unwrap();
        assert_ne!(g.value(a), g.value(b));
    }

    #[test]
    fn plain_path_ignores_wavelet_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let p = ViTParams::init(&mut store, cfg(None), &mut rng).unwrap();
        let img = random_image(9);
        let mut g = Graph::with_params(&store);
        let a = vit_forward(&mut g, &img, &p).unwrap();
        let tokens = patchify(&img, &p.config.patch).unwrap();
        let b = vit_forward_tokens(&mut g, &tokens, &p).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }
}
