use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, NormMode};
use crate::numerics::AdamConfig;
use crate::tasks::{TaskConfig, TaskKind};

/// Longest training length reached by the curriculum.
pub const CURRICULUM_END: usize = 256;

/// Everything that determines a training run and its evaluation.
///
/// The JSON form mirrors the field names; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub norm_mode: NormMode,
    /// Entropy-matched softmax sharpening at evaluation time.
    pub adaptive: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Grow the maximum training length from `task.train_max_len` to
    /// [`CURRICULUM_END`] over the first half of training.
    pub curriculum: bool,
    pub eval_lengths: Vec<usize>,
    pub eval_examples: usize,
    pub seed: u64,
}

impl RunConfig {
    /// Default learning rate for both tasks.
    pub const LEARNING_RATE: f64 = 3e-3;

    pub fn new(kind: TaskKind) -> Self {
        let adam = AdamConfig::default();
        Self {
            task: TaskConfig::new(kind),
            model: ModelConfig::default(),
            norm_mode: NormMode::None,
            adaptive: false,
            steps: match kind {
                TaskKind::Argmax => 100_000,
                TaskKind::Dict => 10_000,
            },
            batch_size: 128,
            learning_rate: Self::LEARNING_RATE,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            curriculum: false,
            eval_lengths: (4..=14).map(|p| 1 << p).collect(),
            eval_examples: 4096,
            seed: 0,
        }
    }

    /// Builds a config from an optional JSON file plus `KEY=VALUE` overrides.
    ///
    /// Both are merged onto the defaults for the task kind they select
    /// (dictionary lookup if neither names one). Keys are dotted paths such
    /// as `task.key_classes`; values are parsed as JSON and fall back to a
    /// plain string.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let patch = json_patch(path, overrides)?;
        let kind = match patch.pointer("/task/kind") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Config(format!("task.kind: {e}")))?,
            None => TaskKind::Dict,
        };
        let cfg: Self = merge_onto(&Self::new(kind), patch)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// This config with `KEY=VALUE` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let cfg: Self = merge_onto(self, json_patch(None, overrides)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 {
            return fail("steps must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive".into());
        }
        if self.eval_lengths.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("eval_lengths must be strictly ascending: {:?}", self.eval_lengths));
        }
        if let Some(&n) = self.eval_lengths.iter().find(|&&n| n == 0 || n > self.task.key_classes) {
            return fail(format!(
                "eval length {n} outside 1..={}",
                self.task.key_classes
            ));
        }
        if self.curriculum && CURRICULUM_END > self.task.key_classes {
            return fail(format!(
                "curriculum needs key_classes >= {CURRICULUM_END}"
            ));
        }
        Ok(())
    }

    /// Maximum training length at `step`.
    pub fn max_len_at(&self, step: usize) -> usize {
        if self.curriculum {
            curriculum_len(step, self.steps, 1, self.task.train_max_len, CURRICULUM_END)
        } else {
            self.task.train_max_len
        }
    }
}

/// JSON object from an optional file with `KEY=VALUE` overrides applied on top.
pub fn json_patch(path: Option<&Path>, overrides: &[String]) -> Result<Value> {
    let mut patch = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !patch.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    for item in overrides {
        apply_override(&mut patch, item)?;
    }
    Ok(patch)
}

/// Deserializes `defaults` with `patch` merged over it. Any type whose
/// deserializer rejects unknown fields rejects unknown keys here too.
pub fn merge_onto<T: Serialize + DeserializeOwned>(defaults: &T, patch: Value) -> Result<T> {
    let mut doc = serde_json::to_value(defaults)?;
    merge(&mut doc, patch);
    serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
}

fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not KEY=VALUE")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let map = match node {
            Value::Object(map) => map,
            _ => return Err(Error::Config(format!("override {key:?} descends into a non-object"))),
        };
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Recursive object merge; `patch` wins on conflicts.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Curriculum schedule for the maximum training length.
///
/// Interpolates log-linearly from `n_max_start` to `n_max_end` over the first
/// half of training and stays at `n_max_end` afterwards.
pub fn curriculum_len(step: usize, steps_total: usize, n_min: usize, n_max_start: usize, n_max_end: usize) -> usize {
    let half = steps_total as f64 / 2.0;
    let frac = if half > 0.0 { (step as f64 / half).min(1.0) } else { 1.0 };
    let ratio = n_max_end as f64 / n_max_start as f64;
    let n = (n_max_start as f64 * ratio.powf(frac)).round() as usize;
    n.max(n_min)
}
