use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use sha2::{Digest, Sha256};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors of one model.
///
/// Values are held in f64 for computation but kept exactly representable in
/// f32 (see [`quantize_f32`]), which is the checkpoint storage precision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        quantize_f32(&mut value);
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total scalar count.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Trainable mask selecting parameters whose name starts with any prefix.
    pub fn mask_by_prefix(&self, prefixes: &[&str]) -> Vec<bool> {
        self.names
            .iter()
            .map(|n| prefixes.iter().any(|p| n.starts_with(p)))
            .collect()
    }

    /// SHA-256 over the names and bit patterns of every masked-in tensor.
    pub fn digest(&self, include: &[bool]) -> String {
        let mut h = Sha256::new();
        for (i, (name, v)) in self.names.iter().zip(&self.values).enumerate() {
            if !include[i] {
                continue;
            }
            h.update(name.as_bytes());
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Round every entry to the nearest f32.
pub fn quantize_f32(m: &mut Mat) {
    m.mapv_inplace(|x| x as f32 as f64);
}

/// Uniform Xavier/Glorot initialization for a `rows × cols` weight.
pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

pub fn normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Mat {
    use rand_distr::{Distribution, Normal};
    let n = Normal::new(0.0, std).expect("finite std");
    Mat::from_shape_fn((rows, cols), |_| n.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_masked_tensors_only() {
        let mut s = ParamStore::new();
        let a = s.add("frozen.w", Mat::zeros((2, 2)));
        let b = s.add("train.w", Mat::zeros((2, 2)));
        let mask = s.mask_by_prefix(&["frozen."]);
        let before = s.digest(&mask);
        s.get_mut(b)[[0, 0]] = 1.0;
        assert_eq!(before, s.digest(&mask));
        s.get_mut(a)[[1, 1]] = 1e-30;
        assert_ne!(before, s.digest(&mask));
    }

    #[test]
    fn values_are_f32_exact() {
        let mut s = ParamStore::new();
        let id = s.add("w", Mat::from_elem((1, 1), 0.1));
        assert_eq!(s.get(id)[[0, 0]], 0.1f32 as f64);
    }
}
