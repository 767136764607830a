//! Named trainable parameters with paired gradient buffers.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A trainable value plus its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter<E: Elem> {
    /// Dotted path, e.g. `stage0.block2.conv.w`.
    pub name: String,
    pub value: Tensor<E>,
    /// Same shape as `value`; zero-initialized, accumulated by backward.
    pub grad: Tensor<E>,
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<E: Elem> {
    params: Vec<Parameter<E>>,
    by_name: HashMap<String, ParamId>,
}

impl<E: Elem> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new(), by_name: HashMap::new() }
    }

    /// Registers a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Internal(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape())?;
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<E> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<E> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<E>> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<E>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<E>> {
        self.params.iter_mut()
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elems(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Resets every gradient buffer to zero.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(E::zero());
        }
    }

    /// Adds `grad` into the parameter's gradient buffer.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<E>) -> Result<()> {
        let p = &mut self.params[id.0];
        if grad.shape() != p.value.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} differs from parameter `{}` shape {:?}",
                grad.shape(),
                p.name,
                p.value.shape()
            )));
        }
        for (g, &u) in p.grad.data_mut().iter_mut().zip(grad.data()) {
            *g = *g + u;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut set = ParamSet::<f32>::new();
        set.insert("w", Tensor::zeros(&[2]).unwrap()).unwrap();
        assert!(matches!(
            set.insert("w", Tensor::zeros(&[2]).unwrap()).unwrap_err(),
            Error::Internal(_)
        ));
    }

    #[test]
    fn grads_start_zero_and_accumulate() {
        let mut set = ParamSet::<f64>::new();
        let id = set.insert("p", Tensor::full(&[3], 1.0).unwrap()).unwrap();
        assert!(set.get(id).grad.data().iter().all(|&g| g == 0.0));
        let g = Tensor::full(&[3], 0.5).unwrap();
        set.accumulate_grad(id, &g).unwrap();
        set.accumulate_grad(id, &g).unwrap();
        assert!(set.get(id).grad.data().iter().all(|&g| g == 1.0));
        set.zero_grads();
        assert!(set.get(id).grad.data().iter().all(|&g| g == 0.0));
    }
}
