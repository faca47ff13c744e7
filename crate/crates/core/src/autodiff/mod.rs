//! Dense 2-D tensors with reverse-mode differentiation.
//!
//! The tape is rebuilt for every forward pass: trainers create a fresh
//! [`Tape`], enter parameters as leaves, compose the loss from primitive
//! ops, call [`Tape::backward`] once, and drop the tape. Everything is
//! `f64` and single-threaded.

mod gradcheck;
mod optim;
mod tape;

pub use gradcheck::finite_diff_check;
pub use optim::{clip_global_norm, Adam};
pub use tape::{softmax_cross_entropy, Gradients, MathError, Param, Tape, TensorId};
