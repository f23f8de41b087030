use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_paired, train, Checkpoint, EvalModel, EvalRow, RunConfig};
use crate::error::{Error, Result};
use crate::model::NormMode;

/// A model family in a sweep: output normalization plus temperature policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub norm_mode: NormMode,
    pub adaptive: bool,
}

impl Variant {
    pub const fn new(norm_mode: NormMode, adaptive: bool) -> Self {
        Self { norm_mode, adaptive }
    }

    /// The four model families of the main length-generalization tables.
    pub fn standard() -> Vec<Variant> {
        vec![
            Variant::new(NormMode::None, false),
            Variant::new(NormMode::LayerNorm, false),
            Variant::new(NormMode::None, true),
            Variant::new(NormMode::LayerNorm, true),
        ]
    }

    pub fn of_row(row: &EvalRow) -> Self {
        Self::new(row.norm_mode, row.adaptive)
    }
}

/// `none`, `layernorm+adaptive`, ...; parsing also accepts `baseline`, `ln`, `std`.
impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.norm_mode.name())?;
        if self.adaptive {
            f.write_str("+adaptive")?;
        }
        Ok(())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, adaptive) = match s.strip_suffix("+adaptive") {
            Some(m) => (m, true),
            None => (s, false),
        };
        Ok(Self::new(NormMode::parse(mode)?, adaptive))
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Worker threads; runs for different seeds proceed in parallel.
    pub jobs: usize,
    /// Return the trained checkpoints alongside the rows.
    pub keep_checkpoints: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            keep_checkpoints: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub variant: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    /// Ordered by seed, then variant (as given), then length.
    pub rows: Vec<EvalRow>,
    pub failures: Vec<RunFailure>,
    pub checkpoints: Vec<Checkpoint>,
}

/// Trains and evaluates every `(seed, variant)` pair.
///
/// Variants that differ only in temperature share one trained model, since
/// sharpening is applied at evaluation time only. All variants of a seed are
/// scored on the same evaluation inputs. A failed run is recorded and the
/// sweep carries on.
pub fn sweep(base: &RunConfig, seeds: &[u64], variants: &[Variant], opts: &SweepOptions) -> Result<SweepResult> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    if variants.is_empty() {
        return Err(Error::Config("sweep needs at least one variant".into()));
    }
    base.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let per_seed: Vec<SweepResult> =
        pool.install(|| seeds.par_iter().map(|&seed| run_seed(base, seed, variants, opts)).collect());

    let mut out = SweepResult::default();
    for r in per_seed {
        out.rows.extend(r.rows);
        out.failures.extend(r.failures);
        out.checkpoints.extend(r.checkpoints);
    }
    Ok(out)
}

fn run_seed(base: &RunConfig, seed: u64, variants: &[Variant], opts: &SweepOptions) -> SweepResult {
    let mut modes: Vec<NormMode> = Vec::new();
    for v in variants {
        if !modes.contains(&v.norm_mode) {
            modes.push(v.norm_mode);
        }
    }
    let mut result = SweepResult::default();
    let mut trained: Vec<(NormMode, Checkpoint)> = Vec::new();
    for mode in modes {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.norm_mode = mode;
        match train(&cfg) {
            Ok(ckpt) => {
                log::info!(
                    "trained task={} norm={} seed={seed} loss={:.5}",
                    cfg.task.kind.name(),
                    mode.name(),
                    ckpt.final_loss
                );
                trained.push((mode, ckpt));
            }
            Err(e) => {
                log::warn!("run failed norm={} seed={seed}: {e}", mode.name());
                for v in variants.iter().filter(|v| v.norm_mode == mode) {
                    result.failures.push(RunFailure {
                        seed,
                        variant: v.to_string(),
                        error: e.to_string(),
                    });
                }
            }
        }
    }

    let runnable: Vec<(Variant, &Checkpoint)> = variants
        .iter()
        .filter_map(|v| {
            trained
                .iter()
                .find(|(m, _)| *m == v.norm_mode)
                .map(|(_, c)| (*v, c))
        })
        .collect();
    let models: Vec<EvalModel<'_>> = runnable
        .iter()
        .map(|(v, c)| EvalModel {
            params: &c.params,
            norm_mode: v.norm_mode,
            temp: c.temp_mode(v.adaptive),
        })
        .collect();
    match evaluate_paired(&base.task, &models, &base.eval_lengths, base.eval_examples, seed) {
        Ok(rows) => {
            for r in rows {
                result.rows.extend(r);
            }
            log::info!("evaluated task={} seed={seed}", base.task.kind.name());
        }
        Err(e) => {
            log::warn!("evaluation failed seed={seed}: {e}");
            for (v, _) in &runnable {
                result.failures.push(RunFailure {
                    seed,
                    variant: v.to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    if opts.keep_checkpoints {
        result.checkpoints = trained.into_iter().map(|(_, c)| c).collect();
    }
    result
}
