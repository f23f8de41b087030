//! Synthetic order-invariant tasks: argmax retrieval and dictionary lookup.
//!
//! Every item is a pair `(key class, value class)`. Key classes inside one
//! sequence are drawn without replacement, value classes i.i.d. uniformly.
//! For argmax retrieval the key class doubles as the item's priority and the
//! target is the value of the highest-priority item. For dictionary lookup one
//! key present in the sequence is the query and the target is its value.
//!
//! Classes are 0-based throughout.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Argmax,
    Dict,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Argmax => "argmax",
            TaskKind::Dict => "dict",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Key classes (dict) or priority classes (argmax).
    pub key_classes: usize,
    pub value_classes: usize,
    /// Longest sequence seen in training.
    pub train_max_len: usize,
}

impl TaskConfig {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            key_classes: 16384,
            value_classes: 64,
            train_max_len: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.value_classes < 2 {
            return Err(Error::Config(format!(
                "value_classes must be >= 2, got {}",
                self.value_classes
            )));
        }
        if self.key_classes == 0 || self.key_classes > u32::MAX as usize {
            return Err(Error::Config(format!("bad key_classes {}", self.key_classes)));
        }
        if self.train_max_len == 0 || self.train_max_len > self.key_classes {
            return Err(Error::Config(format!(
                "train_max_len {} must be in 1..={}",
                self.train_max_len, self.key_classes
            )));
        }
        Ok(())
    }

    pub fn generate<R: Rng + ?Sized>(&self, batch: usize, len: usize, rng: &mut R) -> Result<TaskBatch> {
        match self.kind {
            TaskKind::Argmax => gen_argmax_batch(self, batch, len, rng),
            TaskKind::Dict => gen_dict_batch(self, batch, len, rng),
        }
    }
}

/// `B` sequences of `N` items, stored flat and row-major (`b·N + n`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaskBatch {
    pub len: usize,
    pub keys: Vec<u32>,
    pub values: Vec<u32>,
    /// Query key class per sequence; `None` for argmax retrieval.
    pub queries: Option<Vec<u32>>,
    pub targets: Vec<u32>,
}

impl TaskBatch {
    pub fn batch_size(&self) -> usize {
        self.targets.len()
    }

    pub fn example(&self, b: usize) -> Example<'_> {
        let range = b * self.len..(b + 1) * self.len;
        Example {
            keys: &self.keys[range.clone()],
            values: &self.values[range],
            query: self.queries.as_ref().map(|q| q[b]),
            target: self.targets[b],
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = Example<'_>> {
        (0..self.batch_size()).map(|b| self.example(b))
    }

    /// Fixture dump: `seq_id,pos,key_class,value_class,query_key,target`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seq_id", "pos", "key_class", "value_class", "query_key", "target"])?;
        for (b, ex) in self.examples().enumerate() {
            let query = ex.query.map(|q| q.to_string()).unwrap_or_default();
            for pos in 0..self.len {
                w.write_record([
                    b.to_string(),
                    pos.to_string(),
                    ex.keys[pos].to_string(),
                    ex.values[pos].to_string(),
                    query.clone(),
                    ex.target.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One sequence viewed out of a [`TaskBatch`].
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub keys: &'a [u32],
    pub values: &'a [u32],
    pub query: Option<u32>,
    pub target: u32,
}

fn check_capacity(cfg: &TaskConfig, len: usize) -> Result<()> {
    if len > cfg.key_classes {
        return Err(Error::Capacity {
            len,
            classes: cfg.key_classes,
        });
    }
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

fn sample_items<R: Rng + ?Sized>(
    cfg: &TaskConfig,
    len: usize,
    rng: &mut R,
    keys: &mut Vec<u32>,
    values: &mut Vec<u32>,
) {
    keys.extend(
        index::sample(rng, cfg.key_classes, len)
            .into_iter()
            .map(|k| k as u32),
    );
    values.extend((0..len).map(|_| rng.gen_range(0..cfg.value_classes as u32)));
}

pub fn gen_dict_batch<R: Rng + ?Sized>(
    cfg: &TaskConfig,
    batch: usize,
    len: usize,
    rng: &mut R,
) -> Result<TaskBatch> {
    check_capacity(cfg, len)?;
    let mut keys = Vec::with_capacity(batch * len);
    let mut values = Vec::with_capacity(batch * len);
    let mut queries = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch);
    for b in 0..batch {
        sample_items(cfg, len, rng, &mut keys, &mut values);
        let pick = b * len + rng.gen_range(0..len);
        queries.push(keys[pick]);
        targets.push(values[pick]);
    }
    Ok(TaskBatch {
        len,
        keys,
        values,
        queries: Some(queries),
        targets,
    })
}

pub fn gen_argmax_batch<R: Rng + ?Sized>(
    cfg: &TaskConfig,
    batch: usize,
    len: usize,
    rng: &mut R,
) -> Result<TaskBatch> {
    check_capacity(cfg, len)?;
    let mut keys = Vec::with_capacity(batch * len);
    let mut values = Vec::with_capacity(batch * len);
    let mut targets = Vec::with_capacity(batch);
    for b in 0..batch {
        sample_items(cfg, len, rng, &mut keys, &mut values);
        let seq = b * len..(b + 1) * len;
        let best = seq
            .max_by_key(|&i| keys[i])
            .expect("non-empty sequence");
        targets.push(values[best]);
    }
    Ok(TaskBatch {
        len,
        keys,
        values,
        queries: None,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use rand::seq::SliceRandom;
    use std::collections::HashSet;

    fn small(kind: TaskKind) -> TaskConfig {
        TaskConfig {
            kind,
            key_classes: 8,
            value_classes: 4,
            train_max_len: 4,
        }
    }

    // Independent target rules.
    fn scan_lookup(keys: &[u32], values: &[u32], query: u32) -> u32 {
        for (k, v) in keys.iter().zip(values) {
            if *k == query {
                return *v;
            }
        }
        panic!("query not present");
    }

    fn scan_argmax(keys: &[u32], values: &[u32]) -> u32 {
        let mut best = 0;
        for i in 1..keys.len() {
            if keys[i] > keys[best] {
                best = i;
            }
        }
        values[best]
    }

    #[test]
    fn dict_length_one_is_forced() {
        let mut rng = substream(1, Stream::Train, 0);
        let b = gen_dict_batch(&small(TaskKind::Dict), 5, 1, &mut rng).unwrap();
        for ex in b.examples() {
            assert_eq!(ex.query, Some(ex.keys[0]));
            assert_eq!(ex.target, ex.values[0]);
        }
    }

    #[test]
    fn argmax_length_one_is_forced() {
        let mut rng = substream(1, Stream::Train, 0);
        let b = gen_argmax_batch(&small(TaskKind::Argmax), 5, 1, &mut rng).unwrap();
        for ex in b.examples() {
            assert_eq!(ex.target, ex.values[0]);
        }
    }

    #[test]
    fn argmax_by_inspection() {
        assert_eq!(scan_argmax(&[3, 17, 5], &[2, 9, 4]), 9);
    }

    #[test]
    fn dict_fixture_seed_42() {
        let mut rng = substream(42, Stream::Train, 0);
        let b = gen_dict_batch(&small(TaskKind::Dict), 2, 4, &mut rng).unwrap();
        assert_eq!(b.batch_size(), 2);
        for ex in b.examples() {
            assert_eq!(ex.target, scan_lookup(ex.keys, ex.values, ex.query.unwrap()));
        }
        let mut rng = substream(42, Stream::Train, 0);
        let again = gen_dict_batch(&small(TaskKind::Dict), 2, 4, &mut rng).unwrap();
        assert_eq!(b, again);
        // Frozen so that changes to the sampling order are caught.
        assert_eq!(b.keys, [3, 1, 6, 0, 1, 7, 4, 6]);
        assert_eq!(b.values, [3, 0, 0, 2, 2, 0, 2, 1]);
        assert_eq!(b.queries.as_deref(), Some(&[6, 6][..]));
        assert_eq!(b.targets, [0, 1]);
    }

    #[test]
    fn argmax_fixture_matches_scan() {
        let cfg = TaskConfig::new(TaskKind::Argmax);
        let mut rng = substream(7, Stream::Train, 0);
        let b = gen_argmax_batch(&cfg, 4, 16, &mut rng).unwrap();
        for ex in b.examples() {
            assert_eq!(ex.target, scan_argmax(ex.keys, ex.values));
        }
    }

    #[test]
    fn capacity_error() {
        let mut rng = substream(1, Stream::Train, 0);
        let err = gen_dict_batch(&small(TaskKind::Dict), 1, 9, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Capacity { len: 9, classes: 8 }));
        let err = gen_argmax_batch(&small(TaskKind::Argmax), 1, 9, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn full_capacity_is_a_permutation() {
        let mut rng = substream(2, Stream::Train, 0);
        let b = gen_dict_batch(&small(TaskKind::Dict), 3, 8, &mut rng).unwrap();
        for ex in b.examples() {
            let mut k = ex.keys.to_vec();
            k.sort_unstable();
            assert_eq!(k, (0..8).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn targets_invariant_under_permutation() {
        let mut rng = substream(3, Stream::Train, 0);
        for kind in [TaskKind::Argmax, TaskKind::Dict] {
            let cfg = TaskConfig::new(kind);
            let b = cfg.generate(4, 16, &mut rng).unwrap();
            for ex in b.examples() {
                let mut items: Vec<(u32, u32)> =
                    ex.keys.iter().copied().zip(ex.values.iter().copied()).collect();
                for _ in 0..100 {
                    items.shuffle(&mut rng);
                    let (k, v): (Vec<u32>, Vec<u32>) = items.iter().copied().unzip();
                    let t = match ex.query {
                        Some(q) => scan_lookup(&k, &v, q),
                        None => scan_argmax(&k, &v),
                    };
                    assert_eq!(t, ex.target);
                }
            }
        }
    }

    #[test]
    fn value_marginals_are_uniform() {
        let cfg = TaskConfig::new(TaskKind::Dict);
        let mut rng = substream(4, Stream::Train, 0);
        let mut counts = vec![0usize; cfg.value_classes];
        let mut total = 0usize;
        while total < 100_000 {
            let b = cfg.generate(100, 10, &mut rng).unwrap();
            for &v in &b.values {
                counts[v as usize] += 1;
            }
            total += b.values.len();
        }
        let p = 1.0 / cfg.value_classes as f64;
        let mean = total as f64 * p;
        let sigma = (total as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 5.0 * sigma, "{c} vs {mean}±{sigma}");
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_item() {
        let mut rng = substream(5, Stream::Train, 0);
        let b = gen_dict_batch(&small(TaskKind::Dict), 2, 3, &mut rng).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "seq_id,pos,key_class,value_class,query_key,target");
        assert_eq!(lines.len(), 7);
    }

    proptest::proptest! {
        #[test]
        fn keys_are_distinct(seed in 0u64..1000, len in 1usize..=64, argmax in proptest::bool::ANY) {
            let kind = if argmax { TaskKind::Argmax } else { TaskKind::Dict };
            let cfg = TaskConfig { kind, key_classes: 64, value_classes: 4, train_max_len: 16 };
            let mut rng = substream(seed, Stream::Train, 0);
            let b = cfg.generate(3, len, &mut rng).unwrap();
            for ex in b.examples() {
                let set: HashSet<u32> = ex.keys.iter().copied().collect();
                proptest::prop_assert_eq!(set.len(), len);
                if let Some(q) = ex.query {
                    proptest::prop_assert_eq!(ex.keys.iter().filter(|&&k| k == q).count(), 1);
                }
            }
        }
    }
}
