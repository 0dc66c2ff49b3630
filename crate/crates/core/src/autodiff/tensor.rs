use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major grid of `f64` with a paired gradient grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim("tensor", format!("invalid shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {len} values, got {}", values.len()),
            ));
        }
        Ok(Self {
            grad: vec![0.0; len],
            shape,
            values,
            requires_grad,
        })
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len], requires_grad).expect("zeros: positive extents")
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values, false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Interprets the tensor as a matrix; a vector `[n]` is a `1 x n` row.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// `grad += delta`; a no-op for tensors that do not require gradients.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        if !self.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.grad.len());
        for (g, d) in self.grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.rows_cols();
        &self.values[r * c..(r + 1) * c]
    }
}

/// Which part of the model a parameter belongs to; the optimizer updates by group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    Embedding,
    Unify,
    Wide,
    Mlp,
    Arch,
}

impl ParamGroup {
    /// Everything except the architecture logits.
    pub fn is_model_weight(self) -> bool {
        self != ParamGroup::Arch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Owns every trainable tensor of a model. Graphs borrow it read-only during
/// the forward pass; gradients are accumulated after `backward` returns.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn accumulate(&mut self, grads: &super::Gradients) {
        for (id, g) in grads.iter() {
            self.params[id.0].tensor.accumulate_grad(g);
        }
    }

    /// Trainable scalar count of the given groups.
    pub fn count(&self, mut pred: impl FnMut(ParamGroup) -> bool) -> usize {
        self.params
            .iter()
            .filter(|p| pred(p.group))
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Flattened values of every parameter in `group` (used for bit-level comparisons).
    pub fn snapshot(&self, mut pred: impl FnMut(ParamGroup) -> bool) -> Vec<u64> {
        self.params
            .iter()
            .filter(|p| pred(p.group))
            .flat_map(|p| p.tensor.values().iter().map(|v| v.to_bits()))
            .collect()
    }

    pub fn set_group_requires_grad(&mut self, group: ParamGroup, on: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.tensor.set_requires_grad(on);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3], false).is_err());
        assert!(Tensor::new(vec![0, 2], vec![], false).is_err());
    }

    #[test]
    fn frozen_tensor_grad_untouched() {
        let mut t = Tensor::new(vec![2], vec![1.0, 2.0], false).unwrap();
        t.accumulate_grad(&[5.0, 5.0]);
        assert_eq!(t.grad(), &[0.0, 0.0]);
        t.set_requires_grad(true);
        t.accumulate_grad(&[5.0, 5.0]);
        t.accumulate_grad(&[1.0, 1.0]);
        assert_eq!(t.grad(), &[6.0, 6.0]);
    }
}
