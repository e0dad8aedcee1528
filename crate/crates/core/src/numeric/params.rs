use std::collections::BTreeMap;

use super::tape::Var;
use super::{NumericError, Tensor};

/// Handle to a tensor owned by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    trainable: bool,
    grad: Tensor,
    /// Set when a gradient has been written and not yet cleared.
    grad_pending: bool,
}

/// Named parameter tensors plus their gradient buffers.
///
/// Gradients follow an explicit-reset contract: [`ParamStore::set_grads`]
/// refuses to overwrite a gradient that has not been cleared with
/// [`ParamStore::zero_grad`]. Deliberate accumulation goes through
/// [`ParamStore::accumulate_grads`].
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value: value.with_requires_grad(trainable),
            trainable,
            grad,
            grad_pending: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        let p = &mut self.params[id.0];
        p.trainable = trainable;
        p.value =
            std::mem::replace(&mut p.value, Tensor::scalar(0.0)).with_requires_grad(trainable);
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
            p.grad_pending = false;
        }
    }

    /// Stores freshly computed gradients. Fails if any target still holds an
    /// uncleared gradient from a previous backward pass.
    pub fn set_grads(&mut self, grads: &Gradients) -> Result<(), NumericError> {
        if let Some((&id, _)) = grads
            .map
            .iter()
            .find(|(id, _)| self.params[id.0].grad_pending)
        {
            return Err(NumericError::StaleGradient(self.params[id.0].name.clone()));
        }
        self.accumulate_grads(grads);
        Ok(())
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients) {
        for (&id, g) in &grads.map {
            let p = &mut self.params[id.0];
            for (dst, src) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *dst += src;
            }
            p.grad_pending = true;
        }
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Gradients for every trainable parameter reached by a backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) map: BTreeMap<ParamId, Tensor>,
    pub(crate) leaves: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    /// Gradient for a `requires_grad` leaf of the tape that produced these.
    pub fn wrt(&self, leaf: Var) -> Option<&Tensor> {
        self.leaves.get(&leaf)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.map.iter().map(|(&id, t)| (id, t))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_for(id: ParamId, v: f64) -> Gradients {
        let mut g = Gradients::default();
        g.map.insert(id, Tensor::full(&[2], v));
        g
    }

    #[test]
    fn set_grads_rejects_stale_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[2]), true);
        store.set_grads(&grads_for(id, 1.0)).unwrap();
        let err = store.set_grads(&grads_for(id, 1.0)).unwrap_err();
        assert!(matches!(err, NumericError::StaleGradient(ref n) if n == "w"));
        store.zero_grad();
        store.set_grads(&grads_for(id, 2.0)).unwrap();
        assert_eq!(store.grad(id).data(), &[2.0, 2.0]);
    }

    #[test]
    fn explicit_accumulation_adds() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[2]), true);
        store.accumulate_grads(&grads_for(id, 1.0));
        store.accumulate_grads(&grads_for(id, 0.5));
        assert_eq!(store.grad(id).data(), &[1.5, 1.5]);
    }
}
