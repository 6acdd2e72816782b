use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// A trainable value with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub value: Matrix,
    pub grad: Matrix,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Tensor {
            value,
            grad,
            requires_grad: true,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

/// Whether a parameter takes part in the L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decay {
    Weight,
    Exempt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub decay: Decay,
}

/// Name-addressed registry of every trainable tensor, iterated in
/// registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Matrix, decay: Decay) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            tensor: Tensor::new(value),
            decay,
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].tensor.value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].tensor.value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].tensor.grad
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.value.len()).sum()
    }

    /// Σθ² over decaying parameters.
    pub fn decayed_sum_squares(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.decay == Decay::Weight)
            .map(|p| p.tensor.value.sum_squares())
            .sum()
    }

    /// Σθ² over every parameter.
    pub fn sum_squares(&self) -> f64 {
        self.params.iter().map(|p| p.tensor.value.sum_squares()).sum()
    }

    /// Adds the gradient of `lambda · Σθ²` (decaying parameters only).
    pub fn add_l2_grad(&mut self, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for p in &mut self.params {
            if p.decay == Decay::Weight && p.tensor.requires_grad {
                let value = &p.tensor.value;
                p.tensor.grad.add_scaled(value, 2.0 * lambda);
            }
        }
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    dst.name,
                    dst.tensor.shape(),
                    src.name,
                    src.tensor.shape()
                )));
            }
            dst.tensor.value = src.tensor.value.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.tensor.value.is_finite() && p.tensor.grad.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParameterStore::new();
        store.register("w", Matrix::zeros(1, 1), Decay::Weight).unwrap();
        assert!(store.register("w", Matrix::zeros(1, 1), Decay::Weight).is_err());
    }

    #[test]
    fn l2_grad_skips_exempt() {
        let mut store = ParameterStore::new();
        let w = store.register("w", Matrix::scalar(2.0), Decay::Weight).unwrap();
        let b = store.register("b", Matrix::scalar(3.0), Decay::Exempt).unwrap();
        store.add_l2_grad(0.01);
        assert_eq!(store.grad(w)[(0, 0)], 0.04);
        assert_eq!(store.grad(b)[(0, 0)], 0.0);
        assert!((0.01 * store.decayed_sum_squares() - 0.04).abs() < 1e-15);
    }
}
