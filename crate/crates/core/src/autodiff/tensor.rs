use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::Real;

/// Dense row-major tensor with an explicit trainable flag.
///
/// A tensor with `requires_grad == false` is frozen: gradients may flow
/// through it during backward, but it never holds a gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel != data.len() {
            return Err(crate::Error::Shape { kind: "tensor", lhs: shape, rhs: vec![data.len()] });
        }
        Ok(Self { shape, data, requires_grad, grad: None })
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n], requires_grad, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Values and gradient together, for in-place optimizer updates.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&[T]>) {
        (&mut self.data, self.grad.as_deref())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }
}

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of model parameters, frozen and trainable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: Vec<Tensor<T>>,
    names: Vec<String>,
    lookup: BTreeMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { tensors: Vec::new(), names: Vec::new(), lookup: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        if self.lookup.contains_key(name) {
            bail!(InvalidArgument, "duplicate parameter name {name}");
        }
        let id = ParamId(self.tensors.len());
        self.tensors.push(tensor);
        self.names.push(name.to_string());
        self.lookup.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.tensors.iter().zip(&self.names).enumerate().map(|(i, (t, n))| (ParamId(i), n.as_str(), t))
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |&id| self.get(id).requires_grad)
    }

    /// Changes the trainable flag; switching to frozen drops any gradient buffer.
    pub fn set_requires_grad(&mut self, id: ParamId, on: bool) {
        let t = &mut self.tensors[id.0];
        t.requires_grad = on;
        if !on {
            t.grad = None;
        }
    }

    /// Replaces a tensor's values, keeping its shape and flag.
    pub fn assign(&mut self, id: ParamId, data: &[T]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if t.data.len() != data.len() {
            return Err(crate::Error::Shape { kind: "assign", lhs: t.shape.clone(), rhs: vec![data.len()] });
        }
        t.data.copy_from_slice(data);
        Ok(())
    }

    /// Adds `grads` into the gradient buffers of trainable tensors only.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (i, g) in grads.per_param.iter().enumerate() {
            let (Some(g), Some(t)) = (g, self.tensors.get_mut(i)) else { continue };
            if !t.requires_grad {
                continue;
            }
            match &mut t.grad {
                Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &v)| *b += v),
                None => t.grad = Some(g.clone()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    /// Multiplies every stored gradient by `s`.
    pub fn scale_grads(&mut self, s: T) {
        for g in self.tensors.iter_mut().filter_map(|t| t.grad.as_mut()) {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            names: self.names.clone(),
            lookup: self.lookup.clone(),
        }
    }

    pub fn num_params(&self, trainable: bool) -> usize {
        self.tensors.iter().filter(|t| t.requires_grad == trainable).map(Tensor::numel).sum()
    }
}

/// Parameter gradients produced by one backward pass, indexed by [`ParamId`].
/// Only trainable parameters ever receive an entry.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    pub(crate) per_param: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.per_param.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.per_param.iter().enumerate().filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_tensor_never_receives_grad() {
        let mut store = ParamStore::<f32>::new();
        let a = store.insert("a", Tensor::zeros(vec![2], true)).unwrap();
        let b = store.insert("b", Tensor::zeros(vec![2], false)).unwrap();
        let grads = Gradients { per_param: vec![Some(vec![1.0, 2.0]), Some(vec![3.0, 4.0])] };
        store.accumulate(&grads);
        store.accumulate(&grads);
        assert_eq!(store.get(a).grad(), Some(&[2.0, 4.0][..]));
        assert_eq!(store.get(b).grad(), None);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::zeros(vec![1], true)).unwrap();
        assert!(store.insert("w", Tensor::zeros(vec![1], true)).is_err());
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3], false).is_err());
        assert!(Tensor::<f32>::new(vec![], vec![], false).is_err());
    }
}
