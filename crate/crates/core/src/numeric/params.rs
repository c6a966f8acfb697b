use std::collections::BTreeMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

/// Tape handles for every parameter of a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("parameter {name:?} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name {name:?}")));
        }
        self.params.insert(name, tensor.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Records every parameter as a leaf on `tape`. Parameters whose
    /// `requires_grad` flag is off are recorded as constants.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t)))
                .collect(),
        }
    }

    /// Same as [`ParamStore::bind`] but every parameter is frozen.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, t)| (k.clone(), tape.constant(t)))
                .collect(),
        }
    }

    /// Adds the gradients of a backward pass into each parameter's grad.
    pub fn absorb_grads(&mut self, bound: &Bound, grads: &Gradients) -> Result<()> {
        for (name, tensor) in self.params.iter_mut() {
            if !tensor.requires_grad() {
                continue;
            }
            if let Some(g) = bound.vars.get(name).and_then(|v| grads.get(*v)) {
                tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn freeze(&mut self) {
        self.params.values_mut().for_each(|t| t.set_requires_grad(false));
    }

    pub fn is_frozen(&self) -> bool {
        self.params.values().all(|t| !t.requires_grad())
    }

    /// Sum of squared entries across all parameters (f64 accumulation).
    pub fn squared_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|t| t.data().iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_sorted() {
        let mut ps = ParamStore::new();
        ps.insert("b", Tensor::zeros(&[1])).unwrap();
        ps.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(ps.insert("a", Tensor::zeros(&[1])).is_err());
        assert_eq!(ps.names(), vec!["a", "b"]);
        assert_eq!(ps.numel(), 3);
    }

    #[test]
    fn frozen_store_collects_no_grad() {
        let mut ps = ParamStore::new();
        ps.insert("w", Tensor::ones(&[2])).unwrap();
        ps.freeze();
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape);
        let x = tape.leaf(&Tensor::ones(&[2]).with_requires_grad(true));
        let y = tape.mul(bound.get("w").unwrap(), x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        ps.absorb_grads(&bound, &grads).unwrap();
        assert!(ps.get("w").unwrap().grad().is_none());
        assert!(grads.get(x).is_some());
    }
}
