use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams, ParamVars, TempMode};
use crate::numerics::kernels::entropy;
use crate::numerics::{Adam, Tape};
use crate::rng::{substream, Stream};

/// Number of final training steps whose mean attention entropy becomes the
/// adaptive-temperature reference.
pub const REFERENCE_WINDOW: usize = 1000;

/// Trained model plus the facts evaluation needs about its training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Completed optimizer steps.
    pub step: usize,
    pub params: ModelParams,
    pub reference_entropy: f64,
    pub final_loss: f64,
    /// Provenance block added by [`crate::io::write_json`]; ignored on load.
    #[serde(default, skip_serializing)]
    pub meta: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    /// Evaluation-time temperature policy.
    pub fn temp_mode(&self, adaptive: bool) -> TempMode {
        if adaptive {
            TempMode::Adaptive {
                reference_entropy: self.reference_entropy,
            }
        } else {
            TempMode::Fixed
        }
    }
}

/// Trains a model from scratch with Adam on freshly generated batches.
///
/// Batch lengths are uniform on `1..=N_max`, with `N_max` from
/// [`RunConfig::max_len_at`]. The result is a pure function of `cfg`.
pub fn train(cfg: &RunConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut params = ModelParams::init(
        &cfg.model,
        &cfg.task,
        cfg.norm_mode,
        &mut substream(cfg.seed, Stream::Init, 0),
    )?;
    let mut adam = Adam::new(cfg.adam(), params.tensors().into_iter().map(|(_, t)| t));
    let mut rng = substream(cfg.seed, Stream::Train, 0);
    let window_start = cfg.steps.saturating_sub(REFERENCE_WINDOW);
    let mut entropy_sum = 0.0;
    let mut loss = f64::NAN;

    for step in 0..cfg.steps {
        let len = rng.gen_range(1..=cfg.max_len_at(step));
        let batch = cfg.task.generate(cfg.batch_size, len, &mut rng)?;
        let targets: Vec<usize> = batch.targets.iter().map(|&t| t as usize).collect();

        let mut tape = Tape::new();
        let vars = ParamVars::register_moved(&mut tape, &mut params);
        let trace = match forward(&mut tape, &vars, &params, &batch, cfg.norm_mode, TempMode::Fixed) {
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step, loss: f64::NAN }),
            other => other?,
        };
        let loss_var = tape.cross_entropy(trace.logits, &targets)?;
        loss = tape.value(loss_var).item();
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        if step >= window_start {
            let attn = tape.value(trace.attn);
            let total: f64 = (0..attn.rows()).map(|r| entropy(attn.row_slice(r))).sum();
            entropy_sum += total / attn.rows() as f64;
        }
        tape.backward(loss_var)?;
        vars.restore(&mut tape, &mut params);

        let grads: Vec<&[f64]> = vars
            .all()
            .into_iter()
            .map(|v| tape.grad(v).expect("every parameter reaches the loss"))
            .collect();
        adam.step(&mut params.tensors_mut(), &grads)?;
        if !params.is_finite() {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
        if (step + 1) % 1000 == 0 || step + 1 == cfg.steps {
            log::info!(
                "train task={} norm={} seed={} step={} loss={loss:.5}",
                cfg.task.kind.name(),
                cfg.norm_mode.name(),
                cfg.seed,
                step + 1
            );
        }
    }

    Ok(Checkpoint {
        config: cfg.clone(),
        step: cfg.steps,
        params,
        reference_entropy: entropy_sum / (cfg.steps - window_start) as f64,
        final_loss: loss,
        meta: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, NormMode};
    use crate::tasks::{TaskConfig, TaskKind};

    fn tiny(kind: TaskKind, steps: usize) -> RunConfig {
        let mut cfg = RunConfig::new(kind);
        cfg.task = TaskConfig {
            kind,
            key_classes: 64,
            value_classes: 8,
            train_max_len: 8,
        };
        cfg.model = ModelConfig {
            d_model: 16,
            d_key: 12,
            hidden: 16,
            eps_norm: 1e-5,
        };
        cfg.steps = steps;
        cfg.batch_size = 16;
        cfg.eval_lengths = vec![4, 8, 16];
        cfg.eval_examples = 64;
        cfg
    }

    #[test]
    fn one_step_moves_every_tensor() {
        for mode in [NormMode::None, NormMode::LayerNorm] {
            let mut cfg = tiny(TaskKind::Argmax, 1);
            cfg.norm_mode = mode;
            let ckpt = train(&cfg).unwrap();
            let init = ModelParams::init(&cfg.model, &cfg.task, mode, &mut substream(cfg.seed, Stream::Init, 0)).unwrap();
            for ((name, a), (_, b)) in ckpt.params.tensors().into_iter().zip(init.tensors()) {
                assert_ne!(a, b, "{name} unchanged");
            }
            assert_eq!(ckpt.step, 1);
            assert!(ckpt.reference_entropy > 0.0);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = tiny(TaskKind::Dict, 20);
        let a = serde_json::to_string(&train(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&train(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(a, serde_json::to_string(&train(&other).unwrap()).unwrap());
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let ckpt = train(&tiny(TaskKind::Argmax, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = crate::io::OutputDir::create(dir.path(), false).unwrap();
        let path = out
            .write_json("ckpt.json", &crate::io::Metadata::default(), &ckpt)
            .unwrap();
        let mut back = Checkpoint::load(&path).unwrap();
        assert!(back.meta.take().is_some());
        assert_eq!(back, ckpt);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let mut cfg = tiny(TaskKind::Dict, 200);
        cfg.learning_rate = 1e300;
        assert!(matches!(train(&cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn loss_decreases_on_small_problem() {
        let cfg = tiny(TaskKind::Dict, 400);
        let ckpt = train(&cfg).unwrap();
        assert!(ckpt.final_loss < (8f64).ln() * 0.8, "{}", ckpt.final_loss);
    }
}
