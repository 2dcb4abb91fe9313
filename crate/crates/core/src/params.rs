//! Named parameter storage and its binding onto a graph.

use std::collections::HashMap;
use std::ops::Index;

use hkd_autodiff::{Gradients, Graph, Real, Tensor, Var};
use rand::Rng;

use crate::error::{HkdError, Result};

/// Position of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered set of uniquely named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F> Default for ParamStore<F> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(HkdError::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Result<Binding> {
        let vars = self
            .tensors
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Binding { vars })
    }

    /// Replaces the value of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, tensor: Tensor<F>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| HkdError::Checkpoint(format!("unknown parameter {name}")))?;
        let current = &mut self.tensors[id.0];
        if current.shape() != tensor.shape() {
            return Err(HkdError::Checkpoint(format!(
                "parameter {name}: expected shape {:?}, found {:?}",
                current.shape(),
                tensor.shape()
            )));
        }
        *current = tensor;
        Ok(())
    }
}

/// Graph variables for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Binding over variables created elsewhere, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    /// Gradients in store order.
    pub fn collect<F: Real>(&self, grads: &mut Gradients<F>) -> Vec<Tensor<F>> {
        self.vars
            .iter()
            .map(|&v| grads.take(v).expect("parameter bound as trainable"))
            .collect()
    }
}

impl Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Uniform(-a, a) with `a = 1/sqrt(fan_in)`.
pub fn uniform_init<F: Real>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::from_f64_lossy(rng.random_range(-a..a)))
}
