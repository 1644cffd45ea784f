use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Role of a parameter. Only [`ParamKind::Weight`] entries are regularized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Flat, ordered collection of every trainable tensor of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            kind,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Adds a weight drawn from N(0, std²).
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.add(name, ParamKind::Weight, Tensor::new(shape, data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total number of scalar values across all tensors.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for e in &mut self.entries {
            e.tensor.fill(value);
        }
    }

    /// Flattened copy of every value, in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
        out
    }

    /// Locates flat coordinate `k` as (entry, offset).
    pub(crate) fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, e) in self.entries.iter().enumerate() {
            if k < e.tensor.len() {
                return (i, k);
            }
            k -= e.tensor.len();
        }
        panic!("flat coordinate out of range");
    }

    pub(crate) fn value_mut(&mut self, (entry, offset): (usize, usize)) -> &mut f64 {
        &mut self.entries[entry].tensor.data_mut()[offset]
    }
}
