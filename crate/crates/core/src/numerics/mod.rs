//! Dense `f64` tensors, tape-based reverse-mode autodiff and Adam.

mod adam;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::grad_check;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{axpy, dot};
