use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sapiens_tensor::{Float, Tensor};

use crate::error::{Error, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone)]
pub struct ParamStore<F: Float = f32> {
    map: BTreeMap<String, Tensor<F>>,
}

impl<F: Float> Default for ParamStore<F> {
    fn default() -> Self {
        Self { map: BTreeMap::new() }
    }
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.map.get(name).ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<F>> {
        self.map.remove(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Total number of scalars across every tensor.
    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Marks every tensor as a trainable leaf.
    pub fn trainable(self) -> Self {
        Self {
            map: self.map.into_iter().map(|(k, v)| (k, v.requires_grad(true))).collect(),
        }
    }

    /// Graph-free copies of every tensor.
    pub fn detached(&self) -> Self {
        Self {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.detach())).collect(),
        }
    }

    pub fn zero_grads(&self) {
        self.map.values().for_each(Tensor::zero_grad);
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Moves in every entry of `other` whose name starts with `prefix`.
    pub fn extend_prefixed(&mut self, other: &ParamStore<F>, prefix: &str) {
        for (k, v) in other.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.map.insert(k.clone(), v.clone());
        }
    }
}

/// Normal samples with standard deviation `std`, redrawn outside ±2σ.
pub fn trunc_normal<F: Float, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<F> {
    Tensor::from_fn(shape, |_| loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            break F::of_f64(z * std);
        }
    })
}

pub const INIT_STD: f64 = 0.02;
