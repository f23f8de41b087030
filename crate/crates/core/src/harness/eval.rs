use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{Inference, ModelParams, NormMode, Scratch, TempMode};
use crate::rng::{substream, Stream};
use crate::tasks::{TaskConfig, TaskKind};

/// Examples generated and scored together; bounds memory at long lengths.
pub const EVAL_CHUNK: usize = 128;

/// One line of `eval.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: TaskKind,
    pub norm_mode: NormMode,
    pub adaptive: bool,
    pub seed: u64,
    pub length: usize,
    pub n_examples: usize,
    pub accuracy: f64,
    /// Hash of every evaluation input at this length. Rows with equal
    /// digests were scored on identical data.
    #[serde(skip)]
    pub input_digest: u64,
}

/// Rows for one model plus its training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub steps: usize,
    pub final_loss: f64,
    pub reference_entropy: f64,
}

/// A model to score in [`evaluate_paired`].
#[derive(Debug, Clone, Copy)]
pub struct EvalModel<'a> {
    pub params: &'a ModelParams,
    pub norm_mode: NormMode,
    pub temp: TempMode,
}

impl EvalModel<'_> {
    fn adaptive(&self) -> bool {
        matches!(self.temp, TempMode::Adaptive { .. })
    }
}

/// Length-sweep accuracy of several models on shared data.
///
/// The inputs at length `N` come from the `(seed, eval, N)` substream, so they
/// depend only on `seed` and `N`: every model here, and every later call with
/// the same seed, sees the same sequences. Returns one row list per model.
pub fn evaluate_paired(
    task: &TaskConfig,
    models: &[EvalModel<'_>],
    lengths: &[usize],
    n_examples: usize,
    seed: u64,
) -> Result<Vec<Vec<EvalRow>>> {
    let engines = models
        .iter()
        .map(|m| Inference::new(m.params, m.norm_mode))
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<Vec<EvalRow>> = vec![Vec::with_capacity(lengths.len()); models.len()];
    if n_examples == 0 {
        return Ok(rows);
    }
    let mut scratch = Scratch::default();
    for &len in lengths {
        if len > task.key_classes {
            return Err(Error::Capacity {
                len,
                classes: task.key_classes,
            });
        }
        let mut rng = substream(seed, Stream::Eval, len as u64);
        let mut hasher = DefaultHasher::new();
        let mut correct = vec![0usize; models.len()];
        let mut done = 0;
        while done < n_examples {
            let b = EVAL_CHUNK.min(n_examples - done);
            let batch = task.generate(b, len, &mut rng)?;
            batch.hash(&mut hasher);
            for ((engine, model), hits) in engines.iter().zip(models).zip(&mut correct) {
                for ex in batch.examples() {
                    if engine.predict(&ex, model.temp, &mut scratch)? == ex.target {
                        *hits += 1;
                    }
                }
            }
            done += b;
        }
        let digest = hasher.finish();
        for ((model, hits), out) in models.iter().zip(&correct).zip(&mut rows) {
            out.push(EvalRow {
                task: task.kind,
                norm_mode: model.norm_mode,
                adaptive: model.adaptive(),
                seed,
                length: len,
                n_examples,
                accuracy: *hits as f64 / n_examples as f64,
                input_digest: digest,
            });
        }
    }
    Ok(rows)
}

/// Length-sweep accuracy of one checkpoint, with inputs drawn from `seed`.
pub fn evaluate(
    ckpt: &Checkpoint,
    adaptive: bool,
    lengths: &[usize],
    n_examples: usize,
    seed: u64,
) -> Result<EvalReport> {
    let model = EvalModel {
        params: &ckpt.params,
        norm_mode: ckpt.config.norm_mode,
        temp: ckpt.temp_mode(adaptive),
    };
    let rows = evaluate_paired(&ckpt.config.task, &[model], lengths, n_examples, seed)?
        .pop()
        .unwrap_or_default();
    Ok(EvalReport {
        rows,
        steps: ckpt.step,
        final_loss: ckpt.final_loss,
        reference_entropy: ckpt.reference_entropy,
    })
}
