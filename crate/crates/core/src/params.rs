//! Named parameter and buffer storage.
//!
//! Names are path-like (`encoder.stage1.block0.conv1.weight`); the first
//! segment identifies the component and drives stage freezing.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Whether an entry is optimized or is running state (e.g. batch-norm statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Parameter<T>>,
    param_index: HashMap<String, usize>,
    buffer_index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            param_index: HashMap::new(),
            buffer_index: HashMap::new(),
        }
    }

    fn check_free(&self, name: &str) -> Result<()> {
        if self.param_index.contains_key(name) || self.buffer_index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        Ok(())
    }

    pub fn insert_param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        self.check_free(&name)?;
        let id = self.params.len();
        self.param_index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            tensor: tensor.with_requires_grad(true),
        });
        Ok(ParamId(id))
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        self.check_free(&name)?;
        self.buffer_index.insert(name.clone(), self.buffers.len());
        self.buffers.push(Parameter {
            name,
            tensor: tensor.with_requires_grad(false),
        });
        Ok(())
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.param_index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.params[self.id(name)?.0].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let id = self.id(name)?;
        Ok(&mut self.params[id.0].tensor)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffer_index
            .get(name)
            .map(|&i| &self.buffers[i].tensor)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.buffer_index.get(name) {
            Some(&i) => Ok(&mut self.buffers[i].tensor),
            None => Err(Error::UnknownParameter(name.to_string())),
        }
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Parameter<T>] {
        &self.buffers
    }

    /// Params then buffers, in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&Parameter<T>, EntryKind)> {
        self.params
            .iter()
            .map(|p| (p, EntryKind::Param))
            .chain(self.buffers.iter().map(|b| (b, EntryKind::Buffer)))
    }

    /// Moves every entry of `other` into this store.
    pub fn extend(&mut self, other: ParamStore<T>) -> Result<()> {
        for p in other.params {
            let requires_grad = p.tensor.requires_grad();
            let id = self.insert_param(p.name, p.tensor)?;
            self.params[id.0].tensor.set_requires_grad(requires_grad);
        }
        for b in other.buffers {
            self.insert_buffer(b.name, b.tensor)?;
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn reset_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.reset_grad());
    }

    /// Marks exactly the parameters whose name starts with one of `prefixes` as trainable.
    pub fn set_trainable(&mut self, prefixes: &[String]) {
        for p in &mut self.params {
            let on = prefixes.iter().any(|pre| p.name.starts_with(pre.as_str()));
            p.tensor.set_requires_grad(on);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let conv = |v: &[Parameter<T>]| {
            v.iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect::<Vec<_>>()
        };
        ParamStore {
            params: conv(&self.params),
            buffers: conv(&self.buffers),
            param_index: self.param_index.clone(),
            buffer_index: self.buffer_index.clone(),
        }
    }

    /// Little-endian bytes of every param and buffer whose name starts with `prefix`.
    pub fn snapshot_bytes(&self, prefix: &str) -> Vec<(String, Vec<u8>)> {
        self.entries()
            .filter(|(p, _)| p.name.starts_with(prefix))
            .map(|(p, _)| (p.name.clone(), T::to_le_bytes_vec(p.tensor.values())))
            .collect()
    }
}
