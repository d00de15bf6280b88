use std::collections::HashMap;

use super::{Gradients, Op, Tape};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor owned by a model. Non-trainable entries hold buffers such as
/// batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(config_err(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape().to_vec());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad, trainable });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds the gradients of every parameter leaf on `tape` into the
    /// parameter grad buffers.
    pub fn accumulate(&mut self, tape: &Tape<T>, grads: &Gradients<T>) {
        for (var, op) in tape.ops() {
            if let Op::Param(id) = op {
                let p = &mut self.params[id.0];
                if !p.trainable {
                    continue;
                }
                if let Some(g) = grads.get(var) {
                    p.grad.add_assign(g);
                }
            }
        }
    }

    /// Replaces buffer values recorded on the tape during a training-mode
    /// forward pass (batch-norm running statistics).
    pub fn apply_updates(&mut self, tape: &mut Tape<T>) {
        for (id, value) in tape.take_running_updates() {
            self.params[id.0].value = value;
        }
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(shape_err(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.weight", Tensor::zeros(vec![2]), true).unwrap();
        assert!(s.add("a.weight", Tensor::zeros(vec![2]), true).is_err());
    }

    #[test]
    fn trainable_count_skips_buffers() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(vec![3, 4]), true).unwrap();
        s.add("running_mean", Tensor::zeros(vec![4]), false).unwrap();
        assert_eq!(s.trainable_count(), 12);
    }
}
