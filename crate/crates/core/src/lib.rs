//! Numerical laboratory for the length generalization of single-head
//! attention.
//!
//! The crate trains a one-layer attention model on two order-invariant
//! synthetic tasks (argmax retrieval and dictionary lookup), evaluates it on
//! sequences far longer than those seen in training, and measures how the
//! attention outputs drift as the sequence length grows:
//!
//! - [`numerics`]: `f64` tensors, tape-based reverse-mode autodiff, Adam.
//! - [`model`]: the attention model with optional output normalization and
//!   adaptive softmax temperature.
//! - [`tasks`]: data generators.
//! - [`harness`]: training, curriculum, length-sweep evaluation, multi-seed sweeps.
//! - [`probes`]: variance decay, global mean/variance drift, attention
//!   dispersion and the i.i.d. variance-decay verifier.
//! - [`stats`]: paired t-tests and result aggregation.
//! - [`io`]: CSV/JSON result files.

pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod numerics;
pub mod probes;
pub mod rng;
pub mod stats;
pub mod tasks;

pub use error::{Error, Result};
