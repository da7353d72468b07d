use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// Named parameter tensors in a fixed order; the order is the checkpoint layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<T>> {
        self.index_of(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Data(format!("no parameter named {name}")))
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Replaces the values, keeping names; shapes must agree.
    pub fn load_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::Data(format!(
                "{} tensors supplied for {} parameters",
                values.len(),
                self.tensors.len()
            )));
        }
        for (i, (old, new)) in self.tensors.iter().zip(&values).enumerate() {
            if old.shape() != new.shape() {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?}, stored {:?}",
                    self.names[i],
                    old.shape(),
                    new.shape()
                )));
            }
        }
        self.tensors = values;
        Ok(())
    }
}

/// `rows×cols` matrix with `N(0, std²)` entries.
pub fn normal<T: Real, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::of(z * std)
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

/// Glorot-scaled normal matrix.
pub fn glorot<T: Real, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    normal(rows, cols, (2.0 / (rows + cols) as f64).sqrt(), rng)
}
