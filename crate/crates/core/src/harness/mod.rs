//! Training, length-sweep evaluation and multi-seed sweeps.

mod config;
mod eval;
mod sweep;
mod train;

pub use config::{curriculum_len, json_patch, merge_onto, RunConfig, CURRICULUM_END};
pub use eval::{evaluate, evaluate_paired, EvalModel, EvalReport, EvalRow, EVAL_CHUNK};
pub use sweep::{sweep, RunFailure, SweepOptions, SweepResult, Variant};
pub use train::{train, Checkpoint, REFERENCE_WINDOW};
