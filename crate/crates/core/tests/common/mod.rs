//! Fixtures shared by the integration tests and the acceptance run.

#![allow(dead_code)]

use attnlab_core::model::{forward, smooth_within, ModelConfig, ModelParams, NormMode, ParamVars, TempMode};
use attnlab_core::numerics::{grad_check, Tape, Tensor, Var};
use attnlab_core::rng::{substream, Rng, Stream};
use attnlab_core::tasks::{TaskBatch, TaskConfig, TaskKind};
use attnlab_core::Result;
use rand::Rng as _;

/// Every differentiable tape operation.
pub const OPS: [&str; 16] = [
    "matmul",
    "add",
    "mul",
    "scale",
    "add_row",
    "mul_row",
    "relu",
    "sum",
    "gather_rows",
    "concat_cols",
    "segment_dot",
    "softmax_rows",
    "softmax_rows_with",
    "segment_weighted_sum",
    "standardize_rows",
    "cross_entropy",
];

fn normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::normal(shape, 1.0, rng)
}

/// Entries with magnitude in `[0.1, 2]`, so a ±h probe never crosses zero.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.1..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ out ⊙ w` for a fixed random `w`, so that every output entry gets a
/// distinct upstream gradient.
fn weighted(t: &mut Tape, out: Var, w: &Tensor) -> Result<Var> {
    let c = t.constant(w.clone());
    let m = t.mul(out, c)?;
    Ok(t.sum(m))
}

/// Worst relative gradient error of one random instance of `op`.
pub fn op_check(op: &str, rng: &mut Rng, h: f64) -> Result<f64> {
    type Body = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
    let (inputs, out_shape, body): (Vec<Tensor>, Vec<usize>, Body) = match op {
        "matmul" => (vec![normal(&[3, 4], rng), normal(&[4, 2], rng)], vec![3, 2], Box::new(|t, v| t.matmul(v[0], v[1]))),
        "add" => (vec![normal(&[3, 4], rng), normal(&[3, 4], rng)], vec![3, 4], Box::new(|t, v| t.add(v[0], v[1]))),
        "mul" => (vec![normal(&[3, 4], rng), normal(&[3, 4], rng)], vec![3, 4], Box::new(|t, v| t.mul(v[0], v[1]))),
        "scale" => (vec![normal(&[3, 4], rng)], vec![3, 4], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        "add_row" => (vec![normal(&[3, 4], rng), normal(&[4], rng)], vec![3, 4], Box::new(|t, v| t.add_row(v[0], v[1]))),
        "mul_row" => (vec![normal(&[3, 4], rng), normal(&[4], rng)], vec![3, 4], Box::new(|t, v| t.mul_row(v[0], v[1]))),
        "relu" => (vec![away_from_zero(&[3, 4], rng)], vec![3, 4], Box::new(|t, v| Ok(t.relu(v[0])))),
        "sum" => {
            let inputs = vec![normal(&[3, 4], rng)];
            return grad_check(
                |t, v| {
                    let s = t.sum(v[0]);
                    t.mul(s, s)
                },
                &inputs,
                h,
            );
        }
        "gather_rows" => (
            vec![normal(&[5, 3], rng)],
            vec![4, 3],
            Box::new(|t, v| t.gather_rows(v[0], &[0, 2, 2, 4])),
        ),
        "concat_cols" => (
            vec![normal(&[3, 2], rng), normal(&[3, 3], rng)],
            vec![3, 5],
            Box::new(|t, v| t.concat_cols(v[0], v[1])),
        ),
        "segment_dot" => (
            vec![normal(&[2, 4], rng), normal(&[6, 4], rng)],
            vec![2, 3],
            Box::new(|t, v| t.segment_dot(v[0], v[1], 0.5)),
        ),
        "softmax_rows" => (vec![normal(&[3, 5], rng)], vec![3, 5], Box::new(|t, v| t.softmax_rows(v[0], 1.3))),
        "softmax_rows_with" => (
            vec![normal(&[3, 5], rng)],
            vec![3, 5],
            Box::new(|t, v| t.softmax_rows_with(v[0], vec![0.5, 1.0, 2.0])),
        ),
        "segment_weighted_sum" => (
            vec![normal(&[2, 3], rng), normal(&[6, 4], rng)],
            vec![2, 4],
            Box::new(|t, v| t.segment_weighted_sum(v[0], v[1])),
        ),
        "standardize_rows" => (
            vec![normal(&[3, 5], rng)],
            vec![3, 5],
            Box::new(|t, v| t.standardize_rows(v[0], 1e-5)),
        ),
        "cross_entropy" => {
            let inputs = vec![normal(&[4, 5], rng)];
            return grad_check(|t, v| t.cross_entropy(v[0], &[0, 3, 3, 1]), &inputs, h);
        }
        other => panic!("unknown op {other}"),
    };
    let w = normal(&out_shape, rng);
    grad_check(
        |t, v| {
            let out = body(t, v)?;
            weighted(t, out, &w)
        },
        &inputs,
        h,
    )
}

pub fn small_task(kind: TaskKind) -> TaskConfig {
    TaskConfig {
        kind,
        key_classes: 32,
        value_classes: 8,
        train_max_len: 8,
    }
}

pub fn small_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_key: 6,
        hidden: 16,
        eps_norm: 1e-5,
    }
}

/// Next random model instance (from `*seed` upwards) whose loss has no ReLU
/// kink within ±h of every parameter, where central differences are valid.
pub fn smooth_model_instance(kind: TaskKind, mode: NormMode, h: f64, seed: &mut u64) -> (ModelParams, TaskBatch) {
    loop {
        *seed += 1;
        let task = small_task(kind);
        let p = ModelParams::init(&small_model(), &task, mode, &mut substream(*seed, Stream::Init, 0)).unwrap();
        let batch = task.generate(4, 4, &mut substream(*seed, Stream::Probe, 0)).unwrap();
        if smooth_within(&p, &batch, mode, h).unwrap() {
            return (p, batch);
        }
    }
}

/// Worst relative gradient error of the full model's loss over every parameter.
pub fn model_check(p: &ModelParams, batch: &TaskBatch, mode: NormMode, h: f64) -> Result<f64> {
    let targets: Vec<usize> = batch.targets.iter().map(|&t| t as usize).collect();
    let inputs: Vec<Tensor> = p.tensors().into_iter().map(|(_, t)| t.clone()).collect();
    grad_check(
        |tape, vars| {
            let pv = ParamVars::from_ordered(p, vars);
            let trace = forward(tape, &pv, p, batch, mode, TempMode::Fixed)?;
            tape.cross_entropy(trace.logits, &targets)
        },
        &inputs,
        h,
    )
}
