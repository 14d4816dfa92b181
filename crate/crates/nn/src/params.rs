//! Named parameter storage and deterministic initialization.

use std::collections::BTreeMap;

use fdbeam_core::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Matrix;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub values: Vec<Matrix<T>>,
    index: BTreeMap<String, usize>,
}

/// How a parameter is drawn at construction.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
    /// Zero-mean normal with variance `1 / rows` (fan-in scaling for `x·W`).
    FanIn,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Registers `name` with the given shape. Each parameter draws from its own stream
    /// derived from `seed` and its name, so adding parameters never perturbs the others.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init, seed: u64) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
        let mut normal = |std: f64| {
            let dist = Normal::new(0.0, std).expect("finite std");
            Matrix::from_fn(rows, cols, |_, _| T::lit(dist.sample(&mut rng)))
        };
        let value = match init {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Ones => Matrix::from_vec(rows, cols, vec![T::one(); rows * cols]),
            Init::Normal(std) => normal(std),
            Init::FanIn => normal(1.0 / (rows as f64).sqrt()),
        };
        self.insert(name, value)
    }

    pub fn insert(&mut self, name: &str, value: Matrix<T>) -> usize {
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn zeros_like(&self) -> Vec<Matrix<T>> {
        self.values.iter().map(|v| Matrix::zeros(v.rows, v.cols)).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(|v| v.cast()).collect(), index: self.index.clone() }
    }
}

/// FNV-1a, used only to decorrelate per-parameter RNG streams.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
