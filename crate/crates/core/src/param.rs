//! Named trainable parameters.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{config_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Handle to a parameter inside one [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of uniquely named parameters owned by one network.
///
/// Each store carries a process-unique id so a [`Tape`](crate::Tape) can route
/// gradients back to the right network when several share a graph.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u64,
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        ParamStore {
            id: fresh_id(),
            params: self.params.clone(),
        }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            id: fresh_id(),
            params: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(config_err!("duplicate parameter name `{name}`"));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Conv weight with `U(-sqrt(1/fan_in), +sqrt(1/fan_in))` entries; fan_in = `in * kh * kw`.
    pub fn add_conv_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Shape,
        rng: &mut R,
    ) -> Result<ParamId> {
        let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
        let bound = (1.0 / fan_in).sqrt();
        self.add(name, Tensor::uniform(shape, -bound, bound, rng))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Scalar counts grouped by the first `depth` dot-separated name components,
    /// in first-seen order.
    pub fn breakdown(&self, depth: usize) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for p in &self.params {
            let key = p.name.split('.').take(depth).collect::<Vec<_>>().join(".");
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += p.value.len(),
                None => out.push((key, p.value.len())),
            }
        }
        out
    }

    pub fn zero_values(&mut self) {
        for p in &mut self.params {
            p.value.fill(T::zero());
        }
    }

    /// Zero every parameter whose name starts with `prefix`.
    pub fn zero_values_with_prefix(&mut self, prefix: &str) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.value.fill(T::zero());
        }
    }

    /// Copy of the store in another precision (names and order preserved, fresh id).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            id: fresh_id(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}
