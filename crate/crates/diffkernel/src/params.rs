use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Named parameter tensors in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub seed: u64,
    entries: Vec<(String, Tensor<f32>)>,
}

impl NetworkParams {
    pub fn empty(seed: u64) -> Self {
        Self {
            seed,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(seed: u64, entries: Vec<(String, Tensor<f32>)>) -> Self {
        Self { seed, entries }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn num_values(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    /// Checks that `grads` line up one-to-one with the parameters.
    pub fn check_matching(&self, grads: &[Tensor<f32>]) -> Result<()> {
        if grads.len() != self.entries.len() {
            return shape_err(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.entries.len()
            ));
        }
        for ((name, p), g) in self.entries.iter().zip(grads) {
            if p.shape() != g.shape() {
                return shape_err(format!(
                    "gradient for '{name}' has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
        }
        Ok(())
    }
}

/// Seeded initializer. Draws happen in declaration order, so the same seed
/// and the same sequence of calls always give the same values.
pub struct ParamBuilder {
    rng: ChaCha8Rng,
    params: NetworkParams,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: NetworkParams::empty(seed),
        }
    }

    /// `U(-bound, bound)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f32) -> &mut Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.params
            .push(name, Tensor::new(shape, data).expect("shape and count agree"));
        self
    }

    /// Fan-in uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in(&mut self, name: &str, shape: &[usize], fan_in: usize) -> &mut Self {
        self.uniform(name, shape, 1.0 / (fan_in.max(1) as f32).sqrt())
    }

    pub fn build(self) -> NetworkParams {
        self.params
    }
}
