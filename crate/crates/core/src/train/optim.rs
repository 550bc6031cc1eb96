use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    AdamW { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }

    pub fn adamw() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One SGD step with L2 decay folded into the gradient:
/// `m ← μ·m + (g + wd·p)`, `p ← p − lr·m`.
pub fn sgd_step<T: Scalar>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: T, weight_decay: T, momentum: T) {
    for ((p, &g), m) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let d = g + weight_decay * *p;
        *m = momentum * *m + d;
        *p -= lr * *m;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamParams<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

/// One AdamW step at 1-based step count `t`. Decay shrinks `p` by
/// `1 − lr·wd` independently of the adaptive update.
pub fn adamw_step<T: Scalar>(params: &mut [T], grads: &[T], first: &mut [T], second: &mut [T], t: u64, h: AdamParams<T>) {
    let one = T::one();
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = one - h.beta1.powi(t);
    let c2 = one - h.beta2.powi(t);
    let shrink = one - h.lr * h.weight_decay;
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(first.iter_mut()).zip(second.iter_mut()) {
        *m = h.beta1 * *m + (one - h.beta1) * g;
        *v = h.beta2 * *v + (one - h.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p *= shrink;
        *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}

/// Moment buffers of one parameter. `second` stays empty for SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    /// Completed update steps.
    pub step: u64,
    pub slots: BTreeMap<String, Slot<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Updates every trainable parameter of `store` from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64, weight_decay: f64) -> Result<()> {
        if let Some(p) = store
            .params()
            .iter()
            .find(|p| p.tensor.requires_grad() && p.tensor.grad().is_none())
        {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let lr = T::from_f64_lossy(lr);
        let wd = T::from_f64_lossy(weight_decay);
        for p in store.params_mut() {
            if !p.tensor.requires_grad() {
                continue;
            }
            let n = p.tensor.numel();
            let adam = matches!(self.kind, OptimizerKind::AdamW { .. });
            let slot = self.slots.entry(p.name.clone()).or_insert_with(|| Slot {
                first: vec![T::zero(); n],
                second: if adam { vec![T::zero(); n] } else { Vec::new() },
            });
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let values = p.tensor.values_mut();
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    sgd_step(values, &grad, &mut slot.first, lr, wd, T::from_f64_lossy(momentum))
                }
                OptimizerKind::AdamW { beta1, beta2, eps } => adamw_step(
                    values,
                    &grad,
                    &mut slot.first,
                    &mut slot.second,
                    self.step,
                    AdamParams {
                        lr,
                        beta1: T::from_f64_lossy(beta1),
                        beta2: T::from_f64_lossy(beta2),
                        eps: T::from_f64_lossy(eps),
                        weight_decay: wd,
                    },
                ),
            }
        }
        Ok(())
    }
}
