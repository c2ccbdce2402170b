use std::collections::HashMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable array with its gradient and momentum state.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum_buf: Tensor<T>,
    /// Participates in L2 weight decay.
    pub decay: bool,
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct NamedBuffer<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Every parameter and buffer of one model, in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<NamedBuffer<T>>,
    index: HashMap<String, usize>,
    buffer_index: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new(), buffers: Vec::new(), index: HashMap::new(), buffer_index: HashMap::new() }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid("param", format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            grad: Tensor::zeros(value.shape()),
            momentum_buf: Tensor::zeros(value.shape()),
            value,
            decay,
        });
        Ok(ParamId(id))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        if self.buffer_index.contains_key(&name) {
            return Err(Error::invalid("param", format!("duplicate buffer name {name:?}")));
        }
        let id = self.buffers.len();
        self.buffer_index.insert(name.clone(), id);
        self.buffers.push(NamedBuffer { name, value });
        Ok(BufferId(id))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].value
    }

    /// Two distinct buffers borrowed mutably at once.
    pub fn buffer_pair_mut(&mut self, a: BufferId, b: BufferId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        assert_ne!(a, b);
        if a.0 < b.0 {
            let (lo, hi) = self.buffers.split_at_mut(b.0);
            (&mut lo[a.0].value, &mut hi[0].value)
        } else {
            let (lo, hi) = self.buffers.split_at_mut(a.0);
            (&mut hi[0].value, &mut lo[b.0].value)
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[NamedBuffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [NamedBuffer<T>] {
        &mut self.buffers
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Same parameters in another precision (gradients and momentum reset).
    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.add_param(p.name.clone(), p.value.cast(), p.decay).expect("names are already unique");
        }
        for b in &self.buffers {
            out.add_buffer(b.name.clone(), b.value.cast()).expect("names are already unique");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut ps = ParamSet::<f32>::new();
        ps.add_param("a.weight", Tensor::zeros(&[2]), true).unwrap();
        assert!(ps.add_param("a.weight", Tensor::zeros(&[3]), true).is_err());
        assert_eq!(ps.find("a.weight"), Some(ParamId(0)));
        assert_eq!(ps.num_scalars(), 2);
    }

    #[test]
    fn grad_and_momentum_follow_value_shape() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add_param("w", Tensor::ones(&[2, 3]), true).unwrap();
        let p = ps.get(id);
        assert_eq!(p.grad.shape(), p.value.shape());
        assert_eq!(p.momentum_buf.shape(), p.value.shape());
    }
}
