use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Standard deviation of the normal initializer for tables and projections.
pub const INIT_STD: f64 = 0.02;

/// Handle to one named parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S: Scalar = f64> {
    pub name: String,
    pub value: Tensor<S>,
}

/// Ordered, named collection of trainable tensors.
///
/// Names are dotted paths (`encoder.layer0.attn.query.weight`); insertion
/// order is stable and defines checkpoint layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S: Scalar = f64> {
    params: Vec<Param<S>>,
    index: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, value });
        Ok(id)
    }

    pub fn normal<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], rng: &mut R) -> ParamId {
        self.insert(name, Tensor::randn(shape, INIT_STD, rng))
            .expect("fresh parameter name")
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.insert(name, Tensor::zeros(shape)).expect("fresh parameter name")
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.insert(name, Tensor::ones(shape)).expect("fresh parameter name")
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Swaps in a new value, possibly of a different shape.
    pub fn replace(&mut self, id: ParamId, value: Tensor<S>) {
        self.params[id.0].value = value;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Ids of every parameter whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies every parameter under `prefix` from `other`, bitwise.
    pub fn copy_prefix_from(&mut self, other: &ParamStore<S>, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (_, src) in other.iter().filter(|(_, p)| p.name.starts_with(prefix)) {
            let id = self.id(&src.name).ok_or_else(|| {
                Error::input(format!("parameter {} missing from target model", src.name))
            })?;
            if self.get(id).shape() != src.value.shape() {
                return Err(Error::input(format!(
                    "parameter {} has shape {:?} in source but {:?} in target",
                    src.name,
                    src.value.shape(),
                    self.get(id).shape()
                )));
            }
            self.replace(id, src.value.clone());
            copied += 1;
        }
        Ok(copied)
    }
}

/// Gradient accumulator indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct GradBuffer<S: Scalar = f64> {
    grads: Vec<Option<Tensor<S>>>,
    contributions: usize,
}

impl<S: Scalar> GradBuffer<S> {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
            contributions: 0,
        }
    }

    pub fn for_store(store: &ParamStore<S>) -> Self {
        Self::new(store.len())
    }

    pub fn add(&mut self, id: ParamId, grad: &Tensor<S>) -> Result<()> {
        if id.0 >= self.grads.len() {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(grad)?,
            slot @ None => *slot = Some(grad.clone()),
        }
        Ok(())
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn mark_contribution(&mut self) {
        self.contributions += 1;
    }

    /// Number of backward passes accumulated since the last reset.
    pub fn contributions(&self) -> usize {
        self.contributions
    }

    pub fn scale(&mut self, c: S) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= c;
            }
        }
    }

    pub fn clear(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.contributions = 0;
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|x| x.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
