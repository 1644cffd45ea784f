//! Location branch: 9-bit binary body-map codes and the encoder that reads
//! them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Var};
use crate::transformer::{attention_weights, encoder_stack, AttentionConfig, EncoderLayerParams, Norm};

pub const CODE_BITS: usize = 9;
/// Exclusive upper bound of a 9-bit code.
pub const CODE_RANGE: usize = 1 << CODE_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BodyMap {
    #[serde(rename = "original-484")]
    Original484,
    #[serde(rename = "simplified-323")]
    Simplified323,
}

impl BodyMap {
    pub fn size(self) -> usize {
        match self {
            BodyMap::Original484 => 484,
            BodyMap::Simplified323 => 323,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyMap::Original484 => "original-484",
            BodyMap::Simplified323 => "simplified-323",
        }
    }
}

impl fmt::Display for BodyMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BodyMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original-484" => Ok(BodyMap::Original484),
            "simplified-323" => Ok(BodyMap::Simplified323),
            other => Err(Error::domain(format!(
                "unknown body map `{other}` (expected original-484 or simplified-323)"
            ))),
        }
    }
}

/// A body-map location and its MSB-first binary expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocationCode {
    id: u16,
    bits: [u8; CODE_BITS],
}

impl LocationCode {
    pub fn id(&self) -> usize {
        usize::from(self.id)
    }

    pub fn bits(&self) -> &[u8; CODE_BITS] {
        &self.bits
    }

    pub fn bit_string(&self) -> String {
        self.bits.iter().map(|b| char::from(b'0' + b)).collect()
    }

    /// Code for any id in `[0, 512)`, independent of a body map.
    pub fn from_id(id: usize) -> Result<Self> {
        Ok(Self {
            id: id as u16,
            bits: encode_bits(id)?,
        })
    }
}

/// MSB-first 9-bit expansion of `id`.
pub fn encode_bits(id: usize) -> Result<[u8; CODE_BITS]> {
    if id >= CODE_RANGE {
        return Err(Error::domain(format!(
            "location id {id} does not fit in {CODE_BITS} bits (must be < {CODE_RANGE})"
        )));
    }
    let mut bits = [0u8; CODE_BITS];
    for (k, b) in bits.iter_mut().enumerate() {
        *b = ((id >> (CODE_BITS - 1 - k)) & 1) as u8;
    }
    Ok(bits)
}

/// Encodes a location id of the given body map.
pub fn encode_location(id: usize, map: BodyMap) -> Result<LocationCode> {
    if id >= map.size() {
        return Err(Error::domain(format!(
            "location id {id} out of range for body map {map} (must be < {})",
            map.size()
        )));
    }
    LocationCode::from_id(id)
}

/// Inverse of [`encode_bits`].
pub fn decode_location(bits: &[u8]) -> Result<usize> {
    if bits.len() != CODE_BITS {
        return Err(Error::contract(format!(
            "location code needs {CODE_BITS} bits, got {}",
            bits.len()
        )));
    }
    bits.iter().try_fold(0usize, |acc, &b| match b {
        0 | 1 => Ok((acc << 1) | usize::from(b)),
        other => Err(Error::contract(format!("non-binary entry {other} in location code"))),
    })
}

/// Names of the locations of one body map, indexed by id.
///
/// File format: one `id<TAB>name` line per location, ids dense from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyMapVocabulary {
    names: Vec<String>,
}

impl BodyMapVocabulary {
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, name) = line.split_once('\t').ok_or_else(|| {
                Error::contract(format!("body map line {}: expected `id<TAB>name`", n + 1))
            })?;
            let id: usize = id.trim().parse().map_err(|_| {
                Error::contract(format!("body map line {}: bad id `{id}`", n + 1))
            })?;
            if id != names.len() {
                return Err(Error::contract(format!(
                    "body map line {}: id {id} breaks the dense sequence (expected {})",
                    n + 1,
                    names.len()
                )));
            }
            names.push(name.trim().to_string());
        }
        if names.len() > CODE_RANGE {
            return Err(Error::contract(format!(
                "body map has {} locations; at most {CODE_RANGE} fit a 9-bit code",
                names.len()
            )));
        }
        Ok(Self { names })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    /// Checks that the vocabulary fits the body map.
    pub fn check(&self, map: BodyMap) -> Result<()> {
        if self.len() > map.size() {
            return Err(Error::contract(format!(
                "vocabulary lists {} locations but {map} has only {}",
                self.len(),
                map.size()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocConfig {
    pub d_model: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for LocConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            depth: 6,
            heads: 8,
            mlp_ratio: 4,
        }
    }
}

impl LocConfig {
    pub fn validate(&self) -> Result<()> {
        AttentionConfig::new(self.d_model, self.heads)?;
        if self.depth == 0 || self.mlp_ratio == 0 {
            return Err(Error::contract("location depth and mlp ratio must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LocParams {
    pub config: LocConfig,
    /// One row per bit value: `[2 × d_model]`.
    pub bit_embedding: ParamId,
    /// `[9 × d_model]`.
    pub positions: ParamId,
    pub layers: Vec<EncoderLayerParams>,
    pub norm: Norm,
}

impl LocParams {
    pub fn init(store: &mut ParamStore, config: LocConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let bit_embedding = store.add_normal("loc.bit_embed", &[2, d], 1.0, rng);
        let positions = store.add_normal("loc.pos", &[CODE_BITS, d], 0.02, rng);
        let attn = AttentionConfig::new(d, config.heads)?;
        let layers = (0..config.depth)
            .map(|i| EncoderLayerParams::init(store, &format!("loc.layer{i}"), attn, config.mlp_ratio, rng))
            .collect();
        let norm = Norm::init(store, "loc.norm", d);
        Ok(Self {
            config,
            bit_embedding,
            positions,
            layers,
            norm,
        })
    }
}

/// `Transformer_latent` of one code: a `1×d_model` row.
///
/// Each bit is one token (embedding lookup plus position); the encoder output
/// is mean-pooled over the nine positions and layer-normed.
pub fn location_forward(g: &mut Graph<'_>, code: &LocationCode, p: &LocParams) -> Result<Var> {
    let idx: Vec<usize> = code.bits().iter().map(|&b| usize::from(b)).collect();
    let table = g.param(p.bit_embedding);
    let tokens = g.gather_rows(table, &idx)?;
    let pos = g.param(p.positions);
    let z0 = g.add(tokens, pos)?;
    let z = encoder_stack(g, z0, &p.layers)?;
    let pooled = g.mean_rows(z)?;
    p.norm.forward(g, pooled)
}

/// Attention weights `A = softmax(Q·Kᵀ/√d_k)` over the code positions.
pub fn attention_scores(g: &mut Graph<'_>, q: Var, k: Var) -> Result<Var> {
    attention_weights(g, q, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encode_examples() {
        assert_eq!(encode_bits(0).unwrap(), [0; 9]);
        assert_eq!(encode_bits(5).unwrap(), [0, 0, 0, 0, 0, 0, 1, 0, 1]);
        assert_eq!(encode_bits(483).unwrap(), [1, 1, 1, 1, 0, 0, 0, 1, 1]);
        assert_eq!(encode_location(5, BodyMap::Simplified323).unwrap().bit_string(), "000000101");
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_location(&[0; 9]).unwrap(), 0);
        assert_eq!(decode_location(&[1, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap(), 256);
        assert!(decode_location(&[0, 0, 2, 0, 0, 0, 0, 0, 0]).is_err());
        assert!(decode_location(&[0; 8]).is_err());
    }

    #[test]
    fn map_bounds() {
        assert!(encode_location(483, BodyMap::Original484).is_ok());
        let err = encode_location(484, BodyMap::Original484).unwrap_err().to_string();
        assert!(err.contains("original-484") && err.contains("484"), "{err}");
        assert!(encode_location(322, BodyMap::Simplified323).is_ok());
        assert!(encode_location(323, BodyMap::Simplified323).is_err());
        assert!(encode_bits(512).is_err());
    }

    #[test]
    fn vocabulary_parsing() {
        let v = BodyMapVocabulary::parse("0\thead\n1\tleft foot\n").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.name(1), Some("left foot"));
        assert!(BodyMapVocabulary::parse("1\thead\n").is_err());
        assert!(BodyMapVocabulary::parse("0 head\n").is_err());
        v.check(BodyMap::Simplified323).unwrap();
    }

    fn params(seed: u64) -> (ParamStore, LocParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = LocConfig {
            d_model: 16,
            depth: 2,
            heads: 2,
            mlp_ratio: 4,
        };
        let p = LocParams::init(&mut store, cfg, &mut rng).unwrap();
        (store, p)
    }

    #[test]
    fn zero_params_zero_latent() {
        let (mut store, p) = params(1);
        store.fill(0.0);
        let mut g = Graph::with_params(&store);
        let out = location_forward(&mut g, &LocationCode::from_id(77).unwrap(), &p).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 16]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_bit_flip_changes_latent_and_repeat_is_identical() {
        let (store, p) = params(2);
        let mut g = Graph::with_params(&store);
        let a = location_forward(&mut g, &LocationCode::from_id(100).unwrap(), &p).unwrap();
        let b = location_forward(&mut g, &LocationCode::from_id(101).unwrap(), &p).unwrap();
        let c = location_forward(&mut g, &LocationCode::from_id(100).unwrap(), &p).unwrap();
        assert_ne!(g.value(a), g.value(b));
        assert_eq!(g.value(a), g.value(c));
    }

    #[test]
    fn scores_single_and_uniform() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(&[vec![0.4, 1.0]]).unwrap());
        let k = g.constant(Tensor::from_rows(&[vec![2.0, -1.0]]).unwrap());
        let a = attention_scores(&mut g, q, k).unwrap();
        assert_eq!(g.value(a).data(), &[1.0]);
        let q9 = g.constant(Tensor::full(&[9, 3], 0.3));
        let k9 = g.constant(Tensor::from_rows(&vec![vec![1.0, -2.0, 0.5]; 9]).unwrap());
        let a9 = attention_scores(&mut g, q9, k9).unwrap();
        assert!(g.value(a9).data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
    }
}
