//! Subcommand implementations. Each one resolves its config, checks that it
//! may write all of its outputs, then runs.

use std::path::{Path, PathBuf};

use attnlab_core::harness::{
    evaluate, json_patch, merge_onto, sweep as run_sweep, train as run_train, Checkpoint, EvalRow, RunConfig,
    SweepOptions, Variant,
};
use attnlab_core::io::{read_csv, Metadata, OutputDir};
use attnlab_core::model::NormMode;
use attnlab_core::probes::{
    dispersion_rows, dispersion_topk, drift_from_records, feature_stats, verify_prop1, DispersionRow, DriftRow,
    FeatDumpRow, FeatStdRow, ProbeModel, Prop1Config, TOP_K, TRACKED_FEATURES,
};
use attnlab_core::rng::{substream, Stream};
use attnlab_core::stats::aggregate;
use attnlab_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{input_error, Common};

/// Errors of one command invocation.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    /// The command wrote its results but some of the work failed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn is_config_error(&self) -> bool {
        matches!(self, CliError::Core(e) if e.is_config_error())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn metadata(command: &str, seed: u64, common: &Common, config: impl Serialize) -> Result<Metadata> {
    Ok(Metadata {
        command: command.into(),
        seed,
        overrides: common.set.clone(),
        config: serde_json::to_value(config).map_err(Error::from)?,
    })
}

fn reject_config(common: &Common, command: &str) -> Result<()> {
    if common.config.is_some() || !common.set.is_empty() {
        return Err(Error::Config(format!("{command} takes no --config or --set")).into());
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| input_error(path, e).into())
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn train(common: &Common) -> Result<()> {
    let cfg = run_config(common)?;
    let out = OutputDir::create(&common.out, common.force)?;
    out.check_writable(&["checkpoint.json"])?;
    let meta = metadata("train", cfg.seed, common, &cfg)?;
    let ckpt = run_train(&cfg)?;
    let path = out.write_json("checkpoint.json", &meta, &ckpt)?;
    log::info!("wrote {} (final loss {:.5})", path.display(), ckpt.final_loss);
    Ok(())
}

/// Config keys that `eval` may override on a checkpoint's config.
const EVAL_KEYS: [&str; 3] = ["eval_lengths", "eval_examples", "adaptive"];

pub fn eval(common: &Common, checkpoint: &Path) -> Result<()> {
    if common.config.is_some() {
        return Err(Error::Config("eval reads its config from the checkpoint; use --set".into()).into());
    }
    for item in &common.set {
        let key = item.split_once('=').map_or(item.as_str(), |(k, _)| k);
        if !EVAL_KEYS.contains(&key) {
            return Err(Error::Config(format!("eval can only override {EVAL_KEYS:?}, not {key:?}")).into());
        }
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = ckpt.config.with_overrides(&common.set)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out = OutputDir::create(&common.out, common.force)?;
    out.check_writable(&["eval.csv"])?;
    let meta = metadata(
        "eval",
        seed,
        common,
        json!({ "checkpoint": checkpoint, "run": &cfg }),
    )?;
    let report = evaluate(&ckpt, cfg.adaptive, &cfg.eval_lengths, cfg.eval_examples, seed)?;
    out.write_csv("eval.csv", &meta, &report.rows)?;
    log::info!("wrote {} rows to {}", report.rows.len(), out.path("eval.csv").display());
    Ok(())
}

fn checkpoint_name(mode: NormMode, seed: u64) -> String {
    format!("checkpoint_{}_seed{seed}.json", mode.name())
}

pub fn sweep(common: &Common, n_seeds: u64, variants: &[Variant], save_checkpoints: bool) -> Result<()> {
    let cfg = run_config(common)?;
    if n_seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()).into());
    }
    let variants = if variants.is_empty() {
        Variant::standard()
    } else {
        variants.to_vec()
    };
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + n_seeds).collect();
    let mut modes: Vec<NormMode> = Vec::new();
    for v in &variants {
        if !modes.contains(&v.norm_mode) {
            modes.push(v.norm_mode);
        }
    }
    let mut names = vec!["eval.csv".to_string(), "failures.json".to_string()];
    if save_checkpoints {
        for &s in &seeds {
            names.extend(modes.iter().map(|&m| checkpoint_name(m, s)));
        }
    }
    let out = OutputDir::create(&common.out, common.force)?;
    out.check_writable(&names.iter().map(String::as_str).collect::<Vec<_>>())?;

    let variant_names: Vec<String> = variants.iter().map(Variant::to_string).collect();
    let meta = metadata(
        "sweep",
        cfg.seed,
        common,
        json!({ "run": &cfg, "seeds": &seeds, "variants": variant_names }),
    )?;
    let mut opts = SweepOptions {
        keep_checkpoints: save_checkpoints,
        ..SweepOptions::default()
    };
    if let Some(jobs) = common.jobs {
        opts.jobs = jobs;
    }
    let result = run_sweep(&cfg, &seeds, &variants, &opts)?;
    out.write_csv("eval.csv", &meta, &result.rows)?;
    out.write_json("failures.json", &meta, &json!({ "failures": &result.failures }))?;
    for ckpt in &result.checkpoints {
        out.write_json(&checkpoint_name(ckpt.config.norm_mode, ckpt.config.seed), &meta, ckpt)?;
    }
    log::info!("wrote {} rows to {}", result.rows.len(), out.path("eval.csv").display());
    if !result.failures.is_empty() {
        return Err(CliError::Failed(format!(
            "{} of {} runs failed; see failures.json",
            result.failures.len(),
            seeds.len() * variants.len()
        )));
    }
    Ok(())
}

/// Settings of the `probe` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeConfig {
    /// Lengths to probe; empty means the checkpoint's evaluation lengths.
    /// The training length is always added.
    lengths: Vec<usize>,
    n_seqs: usize,
    features: Vec<usize>,
    k: usize,
    n_examples: usize,
    /// Read attention outputs before the output normalization.
    pre_norm: bool,
    /// Also write every tracked sample to featdump.csv.
    dump_raw: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lengths: Vec::new(),
            n_seqs: 32768,
            features: TRACKED_FEATURES.to_vec(),
            k: TOP_K,
            n_examples: 32,
            pre_norm: false,
            dump_raw: false,
        }
    }
}

/// Index offset separating dispersion streams from feature streams.
const DISPERSION_STREAM: u64 = 1 << 40;

pub fn probe(common: &Common, checkpoints: &[PathBuf]) -> Result<()> {
    let cfg: ProbeConfig = merge_onto(&ProbeConfig::default(), json_patch(common.config.as_deref(), &common.set)?)?;
    if cfg.dump_raw && checkpoints.len() > 1 {
        return Err(Error::Config("dump_raw takes a single checkpoint".into()).into());
    }
    let ckpts = checkpoints
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<Result<Vec<_>>>()?;
    if cfg.n_seqs < 2 || cfg.n_examples == 0 || cfg.k == 0 {
        return Err(Error::Config("probe needs n_seqs >= 2, n_examples >= 1 and k >= 1".into()).into());
    }
    for ckpt in &ckpts {
        let d = ckpt.params.d_model();
        if let Some(f) = cfg.features.iter().find(|&&f| f >= d) {
            return Err(Error::Config(format!("feature {f} outside 0..{d}")).into());
        }
    }
    let seed = common.seed.unwrap_or(ckpts[0].config.seed);
    let mut names = vec!["featstd.csv", "drift.csv", "dispersion.csv"];
    if cfg.dump_raw {
        names.push("featdump.csv");
    }
    let out = OutputDir::create(&common.out, common.force)?;
    out.check_writable(&names)?;
    let meta = metadata(
        "probe",
        seed,
        common,
        json!({ "probe": &cfg, "checkpoints": checkpoints }),
    )?;

    let mut featstd: Vec<FeatStdRow> = Vec::new();
    let mut drift: Vec<DriftRow> = Vec::new();
    let mut dispersion: Vec<DispersionRow> = Vec::new();
    let mut featdump: Vec<FeatDumpRow> = Vec::new();
    for (ckpt, path) in ckpts.iter().zip(checkpoints) {
        let model = ProbeModel {
            pre_norm: cfg.pre_norm,
            ..ProbeModel::new(ckpt)
        };
        let n_train = ckpt.config.task.train_max_len;
        let mut lengths = if cfg.lengths.is_empty() {
            ckpt.config.eval_lengths.clone()
        } else {
            cfg.lengths.clone()
        };
        if !lengths.contains(&n_train) {
            lengths.push(n_train);
        }
        lengths.sort_unstable();
        lengths.dedup();

        log::info!("probing {} ({}) at {} lengths", path.display(), model.source(), lengths.len());
        let mut records = Vec::with_capacity(lengths.len());
        for &n in &lengths {
            let mut rng = substream(seed, Stream::Probe, n as u64);
            let rec = feature_stats(&model, n, cfg.n_seqs, &cfg.features, &mut rng, cfg.dump_raw)?;
            featstd.extend(rec.featstd_rows(&model.source()));
            featdump.extend(rec.featdump_rows());
            let mut rng = substream(seed, Stream::Probe, DISPERSION_STREAM | n as u64);
            let top = dispersion_topk(&model, n, cfg.k.min(n), cfg.n_examples, &mut rng)?;
            dispersion.extend(dispersion_rows(model.norm_mode, n, &top));
            log::info!("length {n}: global_var {:.4e}, top-1 weight {:.4}", rec.global_var, top[0]);
            records.push(rec);
        }
        drift.extend(drift_from_records(&records, n_train)?.iter().map(|p| p.row(model.norm_mode)));
    }
    out.write_csv("featstd.csv", &meta, &featstd)?;
    out.write_csv("drift.csv", &meta, &drift)?;
    out.write_csv("dispersion.csv", &meta, &dispersion)?;
    if cfg.dump_raw {
        out.write_csv("featdump.csv", &meta, &featdump)?;
    }
    log::info!("wrote probe results to {}", out.root().display());
    Ok(())
}

pub fn prop1(common: &Common) -> Result<()> {
    let cfg: Prop1Config = merge_onto(&Prop1Config::default(), json_patch(common.config.as_deref(), &common.set)?)?;
    let seed = common.seed.unwrap_or(0);
    let out = OutputDir::create(&common.out, common.force)?;
    out.check_writable(&["featstd.csv", "slope.json"])?;
    let meta = metadata("prop1", seed, common, &cfg)?;
    let report = verify_prop1(&cfg, &mut substream(seed, Stream::Prop1, 0)).map_err(|e| match e {
        Error::Contract(msg) => Error::Config(msg),
        other => other,
    })?;
    out.write_csv("featstd.csv", &meta, report.featstd_rows(cfg.feature))?;
    out.write_json("slope.json", &meta, &report)?;
    log::info!("slope {:.4} (r² {:.4})", report.fit.slope, report.fit.r2);
    let broken: Vec<usize> = report.rows.iter().filter(|r| !r.bound_holds).map(|r| r.length).collect();
    if !broken.is_empty() {
        return Err(CliError::Failed(format!("variance bound violated at lengths {broken:?}")));
    }
    Ok(())
}

pub fn compare(common: &Common, a: Variant, b: Variant, input: &Path) -> Result<()> {
    reject_config(common, "compare")?;
    let rows: Vec<EvalRow> = read_csv(input).map_err(|e| input_error(input, e))?;
    let out = OutputDir::create(&common.out, common.force)?;
    out.check_writable(&["compare.csv"])?;
    let meta = metadata(
        "compare",
        common.seed.unwrap_or(0),
        common,
        json!({ "in": input, "a": a.to_string(), "b": b.to_string() }),
    )?;
    let table = aggregate(&rows, a, b).map_err(|e| match e {
        Error::Pairing(msg) => Error::Config(format!("{}: {msg}", input.display())),
        other => other,
    })?;
    out.write_csv("compare.csv", &meta, &table)?;
    log::info!("compared {a} with {b} at {} lengths", table.len());
    Ok(())
}
