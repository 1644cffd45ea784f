use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "split fractions must lie in [0, 1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Positions into the input, each list in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `pool` and cuts it into train/val/test by the spec's fractions.
fn cut(pool: &mut Vec<usize>, spec: &SplitSpec, rng: &mut ChaCha8Rng, out: &mut SplitIndices) {
    pool.shuffle(rng);
    let n = pool.len();
    let n_train = ((spec.train * n as f64).round() as usize).min(n);
    let n_val = ((spec.val * n as f64).round() as usize).min(n - n_train);
    let n_val = if spec.test == 0.0 { n - n_train } else { n_val };
    out.train.extend_from_slice(&pool[..n_train]);
    out.val.extend_from_slice(&pool[n_train..n_train + n_val]);
    out.test.extend_from_slice(&pool[n_train + n_val..]);
}

/// Disjoint train/val/test positions covering `0..labels.len()`, stratified
/// by label when requested.
pub fn split(labels: &[usize], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = SplitIndices::default();
    if spec.stratified {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let slots = [spec.train, spec.val, spec.test].iter().filter(|f| **f > 0.0).count();
        for c in 0..k {
            let mut pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if pool.is_empty() {
                continue;
            }
            if pool.len() < slots {
                return Err(Error::contract(format!(
                    "class {c} has {} sample(s), fewer than the {slots} nonempty splits",
                    pool.len()
                )));
            }
            cut(&mut pool, spec, &mut rng, &mut out);
        }
    } else {
        let mut pool: Vec<usize> = (0..labels.len()).collect();
        cut(&mut pool, spec, &mut rng, &mut out);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Copies of the selected elements.
pub fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}
