//! One-layer, single-head attention without residuals or positional
//! encodings, followed by optional output normalization, the output
//! projection and a two-layer ReLU MLP head.
//!
//! ```text
//! Q = y·W_Q   K = X·W_K   V = X·W_V
//! A = softmax(β · Q·Kᵀ/√D)        β = 1 unless adaptive
//! O = A·V  →  norm(O)  →  ·W_O  →  relu(·W1 + b1)·W2  →  logits
//! ```
//!
//! Two execution paths share these semantics: [`forward`] records on a
//! [`Tape`] for training, [`Inference`] is a gradient-free path that
//! precomputes projected embedding tables for long evaluation sequences.

mod inference;
mod params;

use serde::{Deserialize, Serialize};

pub use inference::{Inference, Scratch};
pub use params::{ModelConfig, ModelParams};

use crate::error::{Error, Result};
use crate::numerics::kernels::{softmax_entropy, standardize_in_place};
use crate::numerics::{Tape, Tensor, Var};
use crate::tasks::TaskBatch;

/// Normalization applied to the attention output `O`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    None,
    Standardize,
    LayerNorm,
}

impl NormMode {
    pub fn name(self) -> &'static str {
        match self {
            NormMode::None => "none",
            NormMode::Standardize => "standardize",
            NormMode::LayerNorm => "layernorm",
        }
    }

    /// Accepts canonical names plus the short aliases used on the command line.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" | "baseline" => Ok(NormMode::None),
            "standardize" | "std" => Ok(NormMode::Standardize),
            "layernorm" | "ln" => Ok(NormMode::LayerNorm),
            other => Err(Error::Config(format!("unknown norm mode {other:?}"))),
        }
    }
}

/// Softmax temperature policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TempMode {
    Fixed,
    /// Sharpen each attention row until its entropy drops to the reference.
    Adaptive { reference_entropy: f64 },
}

impl TempMode {
    pub fn inv_temp(self, logits: &[f64]) -> f64 {
        match self {
            TempMode::Fixed => 1.0,
            TempMode::Adaptive { reference_entropy } => adaptive_inv_temp(logits, reference_entropy),
        }
    }
}

pub const MAX_INV_TEMP: f64 = 64.0;
const BISECTION_STEPS: usize = 40;

/// Inverse temperature `β ∈ [1, 64]` making the entropy of `softmax(β·logits)`
/// equal to `reference_entropy`.
///
/// Returns 1 when the row is already at or below the reference and 64 when
/// even the sharpest allowed softmax stays above it.
pub fn adaptive_inv_temp(logits: &[f64], reference_entropy: f64) -> f64 {
    if softmax_entropy(logits, 1.0) <= reference_entropy {
        return 1.0;
    }
    if softmax_entropy(logits, MAX_INV_TEMP) > reference_entropy {
        return MAX_INV_TEMP;
    }
    // Entropy is non-increasing in β; keep H(lo) > ref ≥ H(hi).
    let (mut lo, mut hi) = (1.0, MAX_INV_TEMP);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if softmax_entropy(logits, mid) > reference_entropy {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Trainable leaves of [`ModelParams`] registered on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub gamma: Option<Var>,
    pub beta: Option<Var>,
    pub key_emb: Var,
    pub value_emb: Var,
    pub query_const: Option<Var>,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let mut p = |t: &Tensor| tape.param(t.clone());
        let w_q = p(&params.w_q);
        let w_k = p(&params.w_k);
        let w_v = p(&params.w_v);
        let w_o = p(&params.w_o);
        let gamma = params.gamma.as_ref().map(&mut p);
        let beta = params.beta.as_ref().map(&mut p);
        let key_emb = p(&params.key_emb);
        let value_emb = p(&params.value_emb);
        let query_const = params.query_const.as_ref().map(&mut p);
        let w1 = p(&params.w1);
        let b1 = p(&params.b1);
        let w2 = p(&params.w2);
        Self {
            w_q,
            w_k,
            w_v,
            w_o,
            gamma,
            beta,
            key_emb,
            value_emb,
            query_const,
            w1,
            b1,
            w2,
        }
    }

    /// Like [`ParamVars::register`] but moves the tensors onto the tape
    /// instead of copying them. Hand them back with [`ParamVars::restore`].
    pub fn register_moved(tape: &mut Tape, params: &mut ModelParams) -> Self {
        let vars: Vec<Var> = params
            .tensors_mut()
            .into_iter()
            .map(|t| tape.param(std::mem::take(t)))
            .collect();
        Self::from_ordered(params, &vars)
    }

    /// Moves tensors registered by [`ParamVars::register_moved`] back.
    pub fn restore(&self, tape: &mut Tape, params: &mut ModelParams) {
        for (slot, var) in params.tensors_mut().into_iter().zip(self.all()) {
            *slot = tape.take(var);
        }
    }

    /// Binds leaves that were registered in [`ModelParams::tensors`] order.
    pub fn from_ordered(params: &ModelParams, vars: &[Var]) -> Self {
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("one var per parameter tensor");
        Self {
            w_q: next(),
            w_k: next(),
            w_v: next(),
            w_o: next(),
            gamma: params.gamma.as_ref().map(|_| next()),
            beta: params.beta.as_ref().map(|_| next()),
            key_emb: next(),
            value_emb: next(),
            query_const: params.query_const.as_ref().map(|_| next()),
            w1: next(),
            b1: next(),
            w2: next(),
        }
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.w_q, self.w_k, self.w_v, self.w_o];
        out.extend(self.gamma);
        out.extend(self.beta);
        out.extend([self.key_emb, self.value_emb]);
        out.extend(self.query_const);
        out.extend([self.w1, self.b1, self.w2]);
        out
    }
}

/// Nodes produced by one recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Trace {
    /// Attention weights, `B×N`.
    pub attn: Var,
    /// Attention outputs before normalization, `B×D`.
    pub outputs: Var,
    /// Attention outputs after normalization, `B×D`.
    pub normed: Var,
    /// Class logits, `B×C_V`.
    pub logits: Var,
}

/// Single-query attention over the items `x` (`N×D`) for query `y` (`1×D`).
///
/// Returns the weights `A` (`1×N`) and outputs `O = A·V` (`1×D`).
pub fn attend_on_tape(
    tape: &mut Tape,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    x: Var,
    y: Var,
    temp: TempMode,
) -> Result<(Var, Var)> {
    let q = tape.matmul(y, w_q)?;
    let k = tape.matmul(x, w_k)?;
    let v = tape.matmul(x, w_v)?;
    attention_core(tape, q, k, v, temp)
}

fn attention_core(tape: &mut Tape, q: Var, k: Var, v: Var, temp: TempMode) -> Result<(Var, Var)> {
    let d = tape.value(q).cols();
    if tape.value(k).rows() == 0 {
        return Err(Error::EmptySequence);
    }
    let scores = tape.segment_dot(q, k, 1.0 / (d as f64).sqrt())?;
    let s = tape.value(scores);
    let inv_temp = (0..s.rows()).map(|r| temp.inv_temp(s.row_slice(r))).collect();
    let attn = tape.softmax_rows_with(scores, inv_temp)?;
    let out = tape.segment_weighted_sum(attn, v)?;
    Ok((attn, out))
}

/// Value-level [`attend_on_tape`] using the model's projections.
pub fn attend(params: &ModelParams, x: &Tensor, y: &Tensor, temp: TempMode) -> Result<(Tensor, Tensor)> {
    if x.rows() == 0 || x.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut tape = Tape::new();
    let w_q = tape.constant(params.w_q.clone());
    let w_k = tape.constant(params.w_k.clone());
    let w_v = tape.constant(params.w_v.clone());
    let xv = tape.constant(x.clone());
    let yv = tape.constant(Tensor::row(y.data()));
    let (a, o) = attend_on_tape(&mut tape, w_q, w_k, w_v, xv, yv, temp)?;
    Ok((tape.value(a).clone(), tape.value(o).clone()))
}

/// Records the configured output normalization on a tape.
pub fn normalize_on_tape(
    tape: &mut Tape,
    outputs: Var,
    mode: NormMode,
    gamma: Option<Var>,
    beta: Option<Var>,
    eps: f64,
) -> Result<Var> {
    match mode {
        NormMode::None => Ok(outputs),
        NormMode::Standardize => tape.standardize_rows(outputs, eps),
        NormMode::LayerNorm => {
            let (Some(g), Some(b)) = (gamma, beta) else {
                return Err(Error::Contract("layernorm requires gamma and beta".into()));
            };
            let z = tape.standardize_rows(outputs, eps)?;
            let scaled = tape.mul_row(z, g)?;
            tape.add_row(scaled, b)
        }
    }
}

/// Value-level normalization of one output row.
pub fn normalize_output(o: &[f64], mode: NormMode, params: &ModelParams) -> Result<Vec<f64>> {
    let mut out = o.to_vec();
    normalize_in_place(&mut out, mode, params.gamma.as_ref(), params.beta.as_ref(), params.eps_norm)?;
    Ok(out)
}

pub(crate) fn normalize_in_place(
    row: &mut [f64],
    mode: NormMode,
    gamma: Option<&Tensor>,
    beta: Option<&Tensor>,
    eps: f64,
) -> Result<()> {
    if mode != NormMode::None && row.len() < 2 {
        return Err(Error::DegenerateWidth(row.len()));
    }
    match mode {
        NormMode::None => {}
        NormMode::Standardize => {
            standardize_in_place(row, eps);
        }
        NormMode::LayerNorm => {
            let (Some(g), Some(b)) = (gamma, beta) else {
                return Err(Error::Contract("layernorm requires gamma and beta".into()));
            };
            standardize_in_place(row, eps);
            for ((v, g), b) in row.iter_mut().zip(g.data()).zip(b.data()) {
                *v = g * *v + b;
            }
        }
    }
    Ok(())
}

/// Records the full model on a tape for a whole batch.
pub fn forward(
    tape: &mut Tape,
    vars: &ParamVars,
    params: &ModelParams,
    batch: &TaskBatch,
    mode: NormMode,
    temp: TempMode,
) -> Result<Trace> {
    let b = batch.batch_size();
    if batch.len == 0 {
        return Err(Error::EmptySequence);
    }
    let keys: Vec<usize> = batch.keys.iter().map(|&k| k as usize).collect();
    let values: Vec<usize> = batch.values.iter().map(|&v| v as usize).collect();
    let xk = tape.gather_rows(vars.key_emb, &keys)?;
    let xv = tape.gather_rows(vars.value_emb, &values)?;
    let x = tape.concat_cols(xk, xv)?;

    let y = match (&batch.queries, vars.query_const) {
        (Some(queries), _) => {
            let q: Vec<usize> = queries.iter().map(|&k| k as usize).collect();
            let yk = tape.gather_rows(vars.key_emb, &q)?;
            let pad = tape.constant(Tensor::zeros(&[b, tape.value(vars.value_emb).cols()]));
            tape.concat_cols(yk, pad)?
        }
        (None, Some(qc)) => tape.gather_rows(qc, &vec![0; b])?,
        (None, None) => {
            return Err(Error::Contract(
                "batch has no queries and the model has no constant query".into(),
            ))
        }
    };

    let (attn, outputs) = attend_on_tape(tape, vars.w_q, vars.w_k, vars.w_v, x, y, temp)?;
    let normed = normalize_on_tape(tape, outputs, mode, vars.gamma, vars.beta, params.eps_norm)?;
    let z = tape.matmul(normed, vars.w_o)?;
    let h = tape.matmul(z, vars.w1)?;
    let h = tape.add_row(h, vars.b1)?;
    let h = tape.relu(h);
    let logits = tape.matmul(h, vars.w2)?;
    Ok(Trace {
        attn,
        outputs,
        normed,
        logits,
    })
}

/// On/off state of every MLP hidden unit over a batch (`B·H` flags).
pub fn relu_pattern(params: &ModelParams, batch: &TaskBatch, mode: NormMode) -> Result<Vec<bool>> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let trace = forward(&mut tape, &vars, params, batch, mode, TempMode::Fixed)?;
    let z = tape.value(trace.normed).matmul(&params.w_o)?;
    let pre = z.matmul(&params.w1)?;
    let hidden = params.b1.len();
    Ok(pre
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + params.b1.data()[i % hidden] > 0.0)
        .collect())
}

/// Whether the loss is smooth along every coordinate step of size `h`.
///
/// The model is only piecewise smooth because of the ReLU. A central
/// difference that moves any hidden unit across its kink does not estimate
/// the derivative, so gradient checks must start from points where this holds.
pub fn smooth_within(params: &ModelParams, batch: &TaskBatch, mode: NormMode, h: f64) -> Result<bool> {
    let base = relu_pattern(params, batch, mode)?;
    let mut work = params.clone();
    let n_tensors = work.tensors_mut().len();
    for t in 0..n_tensors {
        let len = work.tensors_mut()[t].len();
        for i in 0..len {
            let orig = work.tensors_mut()[t].data()[i];
            for delta in [h, -h] {
                work.tensors_mut()[t].data_mut()[i] = orig + delta;
                let same = relu_pattern(&work, batch, mode)? == base;
                work.tensors_mut()[t].data_mut()[i] = orig;
                if !same {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Class logits (`B×C_V`) for a batch, without gradients.
pub fn forward_logits(params: &ModelParams, batch: &TaskBatch, mode: NormMode, temp: TempMode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let trace = forward(&mut tape, &vars, params, batch, mode, temp)?;
    Ok(tape.value(trace.logits).clone())
}

#[cfg(test)]
mod tests;
