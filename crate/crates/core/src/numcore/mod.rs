//! Dense matrices and a small reverse-mode differentiation tape.
//!
//! Model code is written against the [`Ops`] trait. The [`Eager`]
//! implementation evaluates directly; [`Tape`] records each primitive so
//! that [`Tape::backward`] can propagate gradients to every leaf. Both call
//! the same [`Matrix`] kernels, so a taped forward pass is bitwise equal to
//! an eager one.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{Eager, Gradients, Ops, Tape, Var};
