//! Named parameter storage shared by the encoder and detector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters in insertion order, each with a gradient buffer of equal shape.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    #[serde(skip)]
    grads: Vec<Tensor>,
}

/// Graph handles for one binding of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
    order: Vec<Var>,
}

impl Bound {
    /// Panics on a name the model never registered; names are static per model.
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter {name} is not bound"),
        }
    }

    /// Routes `name` to another variable, e.g. a differentiable input.
    pub fn rebind(&mut self, name: &str, var: Var) {
        if let Some(slot) = self.vars.get_mut(name) {
            let old = std::mem::replace(slot, var);
            if let Some(pos) = self.order.iter().position(|v| *v == old) {
                self.order[pos] = var;
            }
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.grads.push(Tensor::zeros(value.shape()));
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.values[self.index(name)?])
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.grads[self.index(name)?])
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn values_and_grads_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Registers every parameter as a gradient-requiring leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let mut vars = BTreeMap::new();
        let mut order = Vec::with_capacity(self.len());
        for (name, value) in self.iter() {
            let v = g.param(value);
            vars.insert(name.to_string(), v);
            order.push(v);
        }
        Bound { vars, order }
    }

    /// Moves the leaf gradients of `bound` out of `g` and adds them to the
    /// stored gradient buffers.
    pub fn accumulate_grads(&mut self, g: &mut Graph, bound: &Bound) {
        for (acc, &v) in self.grads.iter_mut().zip(&bound.order) {
            if let Some(grad) = g.take_grad(v) {
                acc.add_assign(&grad);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale(s);
        }
    }

    /// Restores gradient buffers after deserialization.
    pub fn reset_grads(&mut self) {
        self.grads = self.values.iter().map(|v| Tensor::zeros(v.shape())).collect();
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load(&mut self, other: &ParamSet) -> Result<()> {
        if other.names != self.names {
            return Err(Error::InvalidArgument("parameter names differ".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::InvalidShape(format!(
                    "expected {:?}, got {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}
