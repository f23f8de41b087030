//! Paired t-tests and aggregation of sweep results.
//!
//! p-values are two-sided throughout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::harness::{EvalRow, Variant};
use crate::tasks::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_stat: f64,
    pub df: u64,
    pub p_value: f64,
    pub n: usize,
    pub mean_diff: f64,
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `df`
/// degrees of freedom, via `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn t_sf(t: f64, df: u64) -> Result<f64> {
    if df < 1 {
        return Err(Error::Contract("t distribution needs df >= 1".into()));
    }
    if t.is_nan() {
        return Err(Error::NonFinite("t_sf"));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let nu = df as f64;
    let x = nu / (nu + t * t);
    Ok(beta_reg(nu / 2.0, 0.5, x).clamp(0.0, 1.0))
}

/// Paired t-test on `a − b`, with the sample standard deviation of the
/// differences.
///
/// Differences that are all zero give `t = 0, p = 1`. Differences that are
/// identical but non-zero have no defined t statistic and raise
/// [`Error::DegenerateVariance`].
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::Pairing(format!("{} values against {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Contract(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired_t_test"));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = (n - 1) as u64;
    // Rounding in `x − y` can leave a spread of a few ulps between
    // differences that are equal in exact arithmetic.
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sd <= 64.0 * f64::EPSILON * scale || scale == 0.0 {
        if scale == 0.0 {
            return Ok(TTestResult {
                t_stat: 0.0,
                df,
                p_value: 1.0,
                n,
                mean_diff: 0.0,
            });
        }
        return Err(Error::DegenerateVariance(mean));
    }
    let t_stat = mean / (sd / (n as f64).sqrt());
    Ok(TTestResult {
        t_stat,
        df,
        p_value: t_sf(t_stat, df)?,
        n,
        mean_diff: mean,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Mean accuracy of one variant at one length, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub task: TaskKind,
    pub variant: String,
    pub length: usize,
    pub n_seeds: usize,
    pub mean_accuracy: f64,
}

/// One line of `compare.csv`. Means and their difference are in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub task: TaskKind,
    pub length: usize,
    pub variant_a: String,
    pub variant_b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    pub t_stat: f64,
    pub df: u64,
    pub p_value: f64,
}

type Key = (TaskKind, usize);

fn task_order(t: TaskKind) -> u8 {
    match t {
        TaskKind::Argmax => 0,
        TaskKind::Dict => 1,
    }
}

/// Per-seed accuracies of `variant`, keyed by `(task, length)`.
fn by_seed(rows: &[EvalRow], variant: Variant) -> Result<BTreeMap<(u8, usize), (TaskKind, BTreeMap<u64, f64>)>> {
    let mut out: BTreeMap<(u8, usize), (TaskKind, BTreeMap<u64, f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| Variant::of_row(r) == variant) {
        let key: Key = (r.task, r.length);
        let slot = out
            .entry((task_order(key.0), key.1))
            .or_insert_with(|| (r.task, BTreeMap::new()));
        if slot.1.insert(r.seed, r.accuracy).is_some() {
            return Err(Error::Pairing(format!(
                "seed {} appears twice for {variant} at length {}",
                r.seed, r.length
            )));
        }
    }
    Ok(out)
}

/// Mean accuracy table over seeds for every variant present in `rows`.
pub fn mean_table(rows: &[EvalRow]) -> Vec<MeanRow> {
    let mut acc: BTreeMap<(u8, String, usize), (TaskKind, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        acc.entry((task_order(r.task), Variant::of_row(r).to_string(), r.length))
            .or_insert_with(|| (r.task, Vec::new()))
            .1
            .push(r.accuracy);
    }
    acc.into_iter()
        .map(|((_, variant, length), (task, v))| MeanRow {
            task,
            variant,
            length,
            n_seeds: v.len(),
            mean_accuracy: 100.0 * v.iter().sum::<f64>() / v.len() as f64,
        })
        .collect()
}

/// Compares two variants length by length with paired t-tests over seeds.
///
/// Every seed evaluated for one variant must also be present for the other.
pub fn aggregate(rows: &[EvalRow], a: Variant, b: Variant) -> Result<Vec<CompareRow>> {
    let left = by_seed(rows, a)?;
    let right = by_seed(rows, b)?;
    if left.is_empty() || right.is_empty() {
        let missing = if left.is_empty() { a } else { b };
        return Err(Error::Pairing(format!("no rows for variant {missing}")));
    }
    let mut out = Vec::new();
    for key in left.keys().chain(right.keys()).collect::<std::collections::BTreeSet<_>>() {
        let (task, la) = left.get(key).cloned().unwrap_or_else(|| (right[key].0, BTreeMap::new()));
        let lb = right.get(key).map(|x| x.1.clone()).unwrap_or_default();
        let only_a: Vec<u64> = la.keys().filter(|s| !lb.contains_key(s)).copied().collect();
        let only_b: Vec<u64> = lb.keys().filter(|s| !la.contains_key(s)).copied().collect();
        if !only_a.is_empty() || !only_b.is_empty() {
            return Err(Error::Pairing(format!(
                "{} length {}: seeds {only_a:?} missing for {b}, seeds {only_b:?} missing for {a}",
                task.name(),
                key.1
            )));
        }
        let xa: Vec<f64> = la.values().map(|v| 100.0 * v).collect();
        let xb: Vec<f64> = lb.values().map(|v| 100.0 * v).collect();
        let test = paired_t_test(&xa, &xb)?;
        let mean_a = xa.iter().sum::<f64>() / xa.len() as f64;
        let mean_b = xb.iter().sum::<f64>() / xb.len() as f64;
        out.push(CompareRow {
            task,
            length: key.1,
            variant_a: a.to_string(),
            variant_b: b.to_string(),
            mean_a,
            mean_b,
            mean_diff: mean_a - mean_b,
            t_stat: test.t_stat,
            df: test.df,
            p_value: test.p_value,
        });
    }
    Ok(out)
}
