//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation as it runs forward. Calling
//! [`Tape::backward`] on a scalar result walks the record in reverse and
//! populates gradients on every node that requires one. Gradients accumulate
//! across repeated `backward` calls until [`Tape::reset_grads`].

mod conv;
pub mod gradcheck;
mod loss;
mod norm;
mod ops;
mod tape;

pub use norm::{BatchNormMode, BatchStats, BN_EPS, LN_EPS};
pub use tape::{Tape, Var};
