//! Distribution-shift diagnostics for attention outputs.
//!
//! All probes look at the attention output `O` of a model (after its output
//! normalization, unless asked for the raw output) over freshly sampled
//! sequences of the model's task, and at the attention weights themselves.
//! [`verify_prop1`] instead builds a frozen random attention layer over an
//! i.i.d. token vocabulary, where the variance decay can be checked against
//! its upper bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Checkpoint, EVAL_CHUNK};
use crate::model::{Inference, ModelParams, NormMode, Scratch, TempMode};
use crate::numerics::kernels::{mean_std, softmax_in_place};
use crate::numerics::{dot, Tensor};
use crate::tasks::TaskConfig;

/// Default ranks kept by the dispersion probe.
pub const TOP_K: usize = 16;
/// Default tracked features.
pub const TRACKED_FEATURES: [usize; 5] = [0, 1, 2, 3, 4];

/// A model to probe, together with the task distribution its inputs come from.
#[derive(Debug, Clone, Copy)]
pub struct ProbeModel<'a> {
    pub params: &'a ModelParams,
    pub norm_mode: NormMode,
    pub task: &'a TaskConfig,
    /// Read `O` before the output normalization instead of after it.
    pub pre_norm: bool,
}

impl<'a> ProbeModel<'a> {
    pub fn new(ckpt: &'a Checkpoint) -> Self {
        Self {
            params: &ckpt.params,
            norm_mode: ckpt.config.norm_mode,
            task: &ckpt.config.task,
            pre_norm: false,
        }
    }

    /// Label for the `source` column of `featstd.csv`.
    pub fn source(&self) -> String {
        if self.pre_norm {
            format!("{}:pre", self.norm_mode.name())
        } else {
            self.norm_mode.name().to_string()
        }
    }
}

/// Statistics of the attention output at one sequence length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub length: usize,
    /// `(feature, std over sequences)` for each tracked feature.
    pub feature_std: Vec<(usize, f64)>,
    /// Mean over sequences of the across-feature mean of `O`.
    pub global_mean: f64,
    /// Mean over sequences of the across-feature variance of `O`.
    pub global_var: f64,
    /// Raw samples per tracked feature, in the order of `feature_std`.
    pub raw: Option<Vec<Vec<f64>>>,
    /// Mean of the sorted top attention weights, up to [`TOP_K`] ranks.
    pub top_k: Vec<f64>,
}

/// Least-squares line through `(ln N, ln σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

/// Sample variance with the `n − 1` denominator, computed on data shifted by
/// the first sample so that constant input gives exactly zero.
fn sample_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let x0 = xs[0];
    let (s1, s2) = xs.iter().fold((0.0, 0.0), |(s1, s2), x| {
        let d = x - x0;
        (s1 + d, s2 + d * d)
    });
    ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0)
}

/// Descending top `k` of `weights`, written to the front of `buf`.
fn top_k_desc(weights: &[f64], k: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(weights);
    if k < buf.len() {
        buf.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
        buf.truncate(k);
    }
    buf.sort_unstable_by(|a, b| b.total_cmp(a));
}

/// Calls `visit(weights, output)` for `n_seqs` fresh length-`n` sequences.
fn for_each_output<R: Rng + ?Sized>(
    model: &ProbeModel<'_>,
    n: usize,
    n_seqs: usize,
    rng: &mut R,
    mut visit: impl FnMut(&[f64], &[f64]),
) -> Result<()> {
    let engine = Inference::new(model.params, model.norm_mode)?;
    let mut scratch = Scratch::default();
    let mut done = 0;
    while done < n_seqs {
        let b = EVAL_CHUNK.min(n_seqs - done);
        let batch = model.task.generate(b, n, rng)?;
        for ex in batch.examples() {
            engine.attend(&ex, TempMode::Fixed, &mut scratch)?;
            if model.pre_norm || model.norm_mode == NormMode::None {
                visit(scratch.weights(), scratch.output());
            } else {
                let o = engine.normalized(scratch.output())?;
                visit(scratch.weights(), &o);
            }
        }
        done += b;
    }
    Ok(())
}

/// Per-feature spread and global statistics of `O` over `n_seqs` random
/// length-`n` sequences.
pub fn feature_stats<R: Rng + ?Sized>(
    model: &ProbeModel<'_>,
    n: usize,
    n_seqs: usize,
    tracked: &[usize],
    rng: &mut R,
    dump_raw: bool,
) -> Result<ProbeRecord> {
    if n_seqs < 2 {
        return Err(Error::Contract(format!("feature_stats needs n_seqs >= 2, got {n_seqs}")));
    }
    let d = model.params.d_model();
    if let Some(&f) = tracked.iter().find(|&&f| f >= d) {
        return Err(Error::Contract(format!("tracked feature {f} outside 0..{d}")));
    }
    let k = TOP_K.min(n);
    let mut samples = vec![Vec::with_capacity(n_seqs); tracked.len()];
    let (mut mean_sum, mut var_sum) = (0.0, 0.0);
    let mut top = vec![0.0; k];
    let mut buf = Vec::new();
    for_each_output(model, n, n_seqs, rng, |weights, o| {
        for (col, &f) in samples.iter_mut().zip(tracked) {
            col.push(o[f]);
        }
        let (mu, sigma) = mean_std(o);
        mean_sum += mu;
        var_sum += sigma * sigma;
        top_k_desc(weights, k, &mut buf);
        for (t, w) in top.iter_mut().zip(&buf) {
            *t += w;
        }
    })?;
    let count = n_seqs as f64;
    Ok(ProbeRecord {
        length: n,
        feature_std: tracked
            .iter()
            .zip(&samples)
            .map(|(&f, xs)| (f, sample_var(xs).sqrt()))
            .collect(),
        global_mean: mean_sum / count,
        global_var: var_sum / count,
        raw: dump_raw.then_some(samples),
        top_k: top.into_iter().map(|t| t / count).collect(),
    })
}

/// Ordinary least squares on `(ln N, ln σ)`.
///
/// Points with `σ ≤ 0` (or non-finite) are dropped with a warning.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(n, s) in points {
        if s > 0.0 && s.is_finite() && n > 0.0 {
            xs.push(n.ln());
            ys.push(s.ln());
        } else {
            log::warn!("dropping point (N={n}, sigma={s}) from log-log fit");
        }
    }
    let m = xs.len();
    if m < 3 {
        return Err(Error::InsufficientData(m));
    }
    let mx = xs.iter().sum::<f64>() / m as f64;
    let my = ys.iter().sum::<f64>() / m as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        n_points: m,
    })
}

/// Settings of the i.i.d. variance-decay verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop1Config {
    pub d_model: usize,
    pub vocab_size: usize,
    pub lengths: Vec<usize>,
    pub n_seqs: usize,
    /// The output component whose spread is measured.
    pub feature: usize,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Self {
            d_model: 64,
            vocab_size: 1024,
            lengths: (4..=12).map(|p| 1 << p).collect(),
            n_seqs: 100,
            feature: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop1Row {
    pub length: usize,
    /// Sample std of the tracked output component.
    pub std: f64,
    pub variance: f64,
    /// Largest attention weight seen in any sampled sequence.
    pub max_weight: f64,
    /// `N · max_weight² · max_d Var_vocab(v_d) · (1 + 5/√n_seqs)`.
    pub bound: f64,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub rows: Vec<Prop1Row>,
    pub fit: SlopeFit,
    /// Largest |mean| of any value component over the vocabulary after centering.
    pub centering_residual: f64,
    /// Largest per-component value variance over the vocabulary.
    pub max_value_var: f64,
}

/// Measures how the spread of one attention-output component shrinks with
/// the sequence length when tokens are i.i.d. and values have zero mean.
///
/// A frozen random layer (`W_Q, W_K, W_V` with `N(0, 1/D)` entries, a fixed
/// `N(0, I)` query) attends over sequences drawn uniformly with replacement
/// from a vocabulary of `N(0, I)` tokens. The projected value table is
/// centered over the vocabulary so that `E[W_V x] = 0` exactly.
pub fn verify_prop1<R: Rng + ?Sized>(cfg: &Prop1Config, rng: &mut R) -> Result<Prop1Report> {
    let d = cfg.d_model;
    if d == 0 || cfg.vocab_size == 0 {
        return Err(Error::Contract("prop1 needs d_model >= 1 and vocab_size >= 1".into()));
    }
    if cfg.feature >= d {
        return Err(Error::Contract(format!("feature {} outside 0..{d}", cfg.feature)));
    }
    if cfg.n_seqs < 2 {
        return Err(Error::Contract(format!("prop1 needs n_seqs >= 2, got {}", cfg.n_seqs)));
    }
    if cfg.lengths.is_empty() || cfg.lengths.windows(2).any(|w| w[0] >= w[1]) || cfg.lengths[0] == 0 {
        return Err(Error::Contract(format!("lengths must be positive and ascending: {:?}", cfg.lengths)));
    }
    let w_std = 1.0 / (d as f64).sqrt();
    let w_q = Tensor::normal(&[d, d], w_std, rng);
    let w_k = Tensor::normal(&[d, d], w_std, rng);
    let w_v = Tensor::normal(&[d, d], w_std, rng);
    let vocab = Tensor::normal(&[cfg.vocab_size, d], 1.0, rng);
    let query = Tensor::normal(&[1, d], 1.0, rng).matmul(&w_q)?;

    let keys = vocab.matmul(&w_k)?;
    let scale = 1.0 / (d as f64).sqrt();
    let scores: Vec<f64> = (0..cfg.vocab_size)
        .map(|i| scale * dot(query.data(), keys.row_slice(i)))
        .collect();

    let mut values = vocab.matmul(&w_v)?;
    let v = cfg.vocab_size as f64;
    let mut col_mean = vec![0.0; d];
    for i in 0..cfg.vocab_size {
        for (m, x) in col_mean.iter_mut().zip(values.row_slice(i)) {
            *m += x / v;
        }
    }
    let data = values.data_mut();
    for row in data.chunks_exact_mut(d) {
        for (x, m) in row.iter_mut().zip(&col_mean) {
            *x -= m;
        }
    }
    let mut centering_residual = 0.0f64;
    let mut max_value_var = 0.0f64;
    for j in 0..d {
        let col = (0..cfg.vocab_size).map(|i| values.get(i, j));
        let mean = col.clone().sum::<f64>() / v;
        let var = col.map(|x| (x - mean).powi(2)).sum::<f64>() / v;
        centering_residual = centering_residual.max(mean.abs());
        max_value_var = max_value_var.max(var);
    }
    let feature_values: Vec<f64> = (0..cfg.vocab_size).map(|i| values.get(i, cfg.feature)).collect();

    let slack = 1.0 + 5.0 / (cfg.n_seqs as f64).sqrt();
    let mut rows = Vec::with_capacity(cfg.lengths.len());
    let mut tokens = Vec::new();
    let mut weights = Vec::new();
    for &n in &cfg.lengths {
        let mut outs = Vec::with_capacity(cfg.n_seqs);
        let mut max_weight = 0.0f64;
        for _ in 0..cfg.n_seqs {
            tokens.clear();
            tokens.extend((0..n).map(|_| rng.gen_range(0..cfg.vocab_size)));
            weights.clear();
            weights.extend(tokens.iter().map(|&t| scores[t]));
            softmax_in_place(&mut weights, 1.0);
            max_weight = weights.iter().fold(max_weight, |m, &w| m.max(w));
            outs.push(tokens.iter().zip(&weights).map(|(&t, a)| a * feature_values[t]).sum());
        }
        let variance = sample_var(&outs);
        let bound = n as f64 * max_weight * max_weight * max_value_var * slack;
        rows.push(Prop1Row {
            length: n,
            std: variance.sqrt(),
            variance,
            max_weight,
            bound,
            bound_holds: variance <= bound,
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.length as f64, r.std)).collect();
    Ok(Prop1Report {
        fit: fit_loglog_slope(&points)?,
        rows,
        centering_residual,
        max_value_var,
    })
}

/// Mean of the `k` largest attention weights over `n_examples` random
/// length-`n` sequences, in descending order.
pub fn dispersion_topk<R: Rng + ?Sized>(
    model: &ProbeModel<'_>,
    n: usize,
    k: usize,
    n_examples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k > n {
        return Err(Error::Contract(format!("top-{k} of a length-{n} sequence")));
    }
    if n_examples == 0 {
        return Err(Error::Contract("dispersion needs at least one example".into()));
    }
    let mut acc = vec![0.0; k];
    let mut buf = Vec::new();
    for_each_output(model, n, n_examples, rng, |weights, _| {
        top_k_desc(weights, k, &mut buf);
        for (a, w) in acc.iter_mut().zip(&buf) {
            *a += w;
        }
    })?;
    Ok(acc.into_iter().map(|a| a / n_examples as f64).collect())
}

/// One point of the global mean/variance drift curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub length: usize,
    pub global_mean: f64,
    /// `(μ̄(N) − μ̄(N_train)) / σ̄²(N_train)`.
    pub normalized_mean_drift: f64,
    pub global_var: f64,
}

/// Global mean and variance of `O` at each length, with the mean drift
/// normalized by the global variance at the training length `n_train`.
pub fn drift_curve<R: Rng + ?Sized>(
    model: &ProbeModel<'_>,
    lengths: &[usize],
    n_train: usize,
    n_seqs: usize,
    rng: &mut R,
) -> Result<Vec<DriftPoint>> {
    if !lengths.contains(&n_train) {
        return Err(Error::Contract(format!("lengths {lengths:?} must include the training length {n_train}")));
    }
    let records = lengths
        .iter()
        .map(|&n| feature_stats(model, n, n_seqs, &[], rng, false))
        .collect::<Result<Vec<_>>>()?;
    drift_from_records(&records, n_train)
}

/// [`drift_curve`] over records that were already measured.
pub fn drift_from_records(records: &[ProbeRecord], n_train: usize) -> Result<Vec<DriftPoint>> {
    let reference = records
        .iter()
        .find(|r| r.length == n_train)
        .ok_or_else(|| Error::Contract(format!("no record at the training length {n_train}")))?;
    if reference.global_var == 0.0 {
        return Err(Error::DegenerateModel(format!(
            "global variance is zero at the training length {n_train}"
        )));
    }
    let (mu0, var0) = (reference.global_mean, reference.global_var);
    Ok(records
        .iter()
        .map(|r| DriftPoint {
            length: r.length,
            global_mean: r.global_mean,
            normalized_mean_drift: (r.global_mean - mu0) / var0,
            global_var: r.global_var,
        })
        .collect())
}

/// One line of `featstd.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatStdRow {
    pub source: String,
    pub length: usize,
    pub feature: usize,
    pub std: f64,
}

/// One line of `drift.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub norm_mode: NormMode,
    pub length: usize,
    pub normalized_mean_drift: f64,
    pub global_var: f64,
}

/// One line of `dispersion.csv`. Ranks start at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionRow {
    pub norm_mode: NormMode,
    pub length: usize,
    pub rank: usize,
    pub mean_weight: f64,
}

/// One line of `featdump.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatDumpRow {
    pub length: usize,
    pub feature: usize,
    pub sample_value: f64,
}

impl ProbeRecord {
    pub fn featstd_rows(&self, source: &str) -> impl Iterator<Item = FeatStdRow> + '_ {
        let source = source.to_string();
        self.feature_std.iter().map(move |&(feature, std)| FeatStdRow {
            source: source.clone(),
            length: self.length,
            feature,
            std,
        })
    }

    pub fn featdump_rows(&self) -> Vec<FeatDumpRow> {
        let Some(raw) = &self.raw else {
            return Vec::new();
        };
        self.feature_std
            .iter()
            .zip(raw)
            .flat_map(|(&(feature, _), xs)| {
                xs.iter().map(move |&sample_value| FeatDumpRow {
                    length: self.length,
                    feature,
                    sample_value,
                })
            })
            .collect()
    }
}

impl Prop1Report {
    pub fn featstd_rows(&self, feature: usize) -> Vec<FeatStdRow> {
        self.rows
            .iter()
            .map(|r| FeatStdRow {
                source: "prop1".into(),
                length: r.length,
                feature,
                std: r.std,
            })
            .collect()
    }
}

impl DriftPoint {
    pub fn row(&self, norm_mode: NormMode) -> DriftRow {
        DriftRow {
            norm_mode,
            length: self.length,
            normalized_mean_drift: self.normalized_mean_drift,
            global_var: self.global_var,
        }
    }
}

/// Rows of `dispersion.csv` for one length.
pub fn dispersion_rows(norm_mode: NormMode, length: usize, weights: &[f64]) -> Vec<DispersionRow> {
    weights
        .iter()
        .enumerate()
        .map(|(i, &mean_weight)| DispersionRow {
            norm_mode,
            length,
            rank: i + 1,
            mean_weight,
        })
        .collect()
}
