use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, row-major weight tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in_uniform(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut t = Self::zeros(name, shape);
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        for v in &mut t.data {
            *v = rng.random_range(-bound..bound);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// An ordered collection of tensors: the weights of one network, or the
/// gradients / optimizer moments shaped like them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), &t.shape))
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Dimension {
                what: "tensor count",
                expected: self.tensors.len(),
                actual: other.tensors.len(),
            });
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape != b.shape || a.name != b.name {
                return Err(Error::Dimension {
                    what: "tensor shape",
                    expected: a.len(),
                    actual: b.len(),
                });
            }
        }
        Ok(())
    }

    /// Scalar at a flat position across all tensors.
    pub fn scalar(&self, mut index: usize) -> f64 {
        for t in &self.tensors {
            if index < t.len() {
                return t.data[index];
            }
            index -= t.len();
        }
        panic!("scalar index out of range")
    }

    pub fn scalar_mut(&mut self, mut index: usize) -> &mut f64 {
        for t in &mut self.tensors {
            if index < t.len() {
                return &mut t.data[index];
            }
            index -= t.len();
        }
        panic!("scalar index out of range")
    }

    pub fn iter_scalars(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter_scalars().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter_scalars().all(|v| v.is_finite())
    }
}

/// `target <- xi * online + (1 - xi) * target` for every weight.
pub fn soft_update(target: &mut ParamSet, online: &ParamSet, xi: f64) -> Result<()> {
    target.check_compatible(online)?;
    for (t, o) in target.tensors.iter_mut().zip(&online.tensors) {
        for (tv, ov) in t.data.iter_mut().zip(&o.data) {
            *tv = xi * ov + (1.0 - xi) * *tv;
        }
    }
    Ok(())
}
