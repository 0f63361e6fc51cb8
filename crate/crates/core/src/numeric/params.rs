use std::collections::HashMap;

use crate::error::{LabError, Result};
use crate::numeric::Tensor;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors with one gradient slot each.
///
/// Insertion order is preserved; it fixes both the optimizer's iteration
/// order and the checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    grad_ready: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(LabError::config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.grad_ready.push(false);
        self.names.push(name);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.grad_ready[id.0].then(|| &self.grads[id.0])
    }

    pub(crate) fn set_grad(&mut self, id: ParamId, grad: Tensor) {
        debug_assert!(grad.same_shape(&self.values[id.0]));
        self.grads[id.0] = grad;
        self.grad_ready[id.0] = true;
    }

    pub(crate) fn set_zero_grad(&mut self, id: ParamId) {
        self.grads[id.0].data_mut().iter_mut().for_each(|g| *g = 0.0);
        self.grad_ready[id.0] = true;
    }

    /// Mark every gradient slot as empty.
    pub fn clear_grads(&mut self) {
        self.grad_ready.iter_mut().for_each(|r| *r = false);
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }

    /// First non-finite parameter, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.values
            .iter()
            .position(|v| !v.all_finite())
            .map(|i| self.names[i].as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Copy of the subset whose names start with `prefix`, prefix preserved.
    pub fn subset(&self, prefix: &str) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, value) in self.iter() {
            if name.starts_with(prefix) {
                out.insert(name, value.clone())?;
            }
        }
        Ok(out)
    }

    /// Overwrite values of matching names from `other`.
    pub fn load_values_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, value) in other.iter() {
            let id = self
                .id(name)
                .ok_or_else(|| LabError::config(format!("unknown parameter `{name}`")))?;
            if !self.values[id.0].same_shape(value) {
                return Err(LabError::config(format!("shape mismatch for `{name}`")));
            }
            self.values[id.0] = value.clone();
        }
        Ok(())
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_identical(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
