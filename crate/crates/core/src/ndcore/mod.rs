//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Rank-1/2 `f64` tensors, an eager op set recorded on a [`Tape`], and a
//! central-difference [`grad_check`] harness. Small and slow on purpose:
//! everything here is sized for desk-scale models where being able to verify
//! every gradient matters more than throughput.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Tape, LOG_CLAMP};
pub use tensor::Tensor;
