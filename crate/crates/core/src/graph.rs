use std::collections::HashMap;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A tape bound to a parameter store for one forward pass.
///
/// Each parameter is recorded on the tape at most once. In inference mode
/// parameters enter as constants and nothing is kept for backward.
pub struct Graph<'s, T> {
    pub tape: Tape<T>,
    pub store: &'s ParamStore<T>,
    bound: HashMap<ParamId, Var>,
    inference: bool,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: HashMap::new(),
            inference: false,
        }
    }

    pub fn inference(store: &'s ParamStore<T>) -> Self {
        Self {
            inference: true,
            ..Self::new(store)
        }
    }

    pub fn is_inference(&self) -> bool {
        self.inference
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let v = if self.inference {
            let t = &self.store.param(id).tensor;
            self.tape.constant(Tensor::new(t.shape(), t.values().to_vec())?)
        } else {
            self.tape.param(self.store, id)
        };
        self.bound.insert(id, v);
        Ok(v)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.store.id(name).is_ok()
    }

    pub fn into_tape(self) -> Tape<T> {
        self.tape
    }
}
