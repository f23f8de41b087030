use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NormMode;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tasks::{TaskConfig, TaskKind};

/// Architecture sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Item feature width `D`.
    pub d_model: usize,
    /// Width of the key/priority embedding; the value embedding gets the rest.
    pub d_key: usize,
    /// MLP hidden width.
    pub hidden: usize,
    pub eps_norm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_key: 48,
            hidden: 128,
            eps_norm: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn d_value(&self) -> usize {
        self.d_model - self.d_key
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_key == 0 || self.d_key >= self.d_model {
            return Err(Error::Config(format!(
                "d_key must be in 1..d_model ({}), got {}",
                self.d_model, self.d_key
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be positive".into()));
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::Config(format!("eps_norm must be > 0, got {}", self.eps_norm)));
        }
        Ok(())
    }
}

/// All trainable tensors of the one-layer attention model.
///
/// Row-vector convention: an item feature `x` is `1×D` and projects as
/// `x·W`. Item features are `[key_emb[k] ‖ value_emb[v]]`; the dictionary
/// query is `[key_emb[q] ‖ 0]`, the argmax query is `query_const`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    /// Layer-norm scale and shift; present only for [`NormMode::LayerNorm`].
    pub gamma: Option<Tensor>,
    pub beta: Option<Tensor>,
    pub eps_norm: f64,
    pub key_emb: Tensor,
    pub value_emb: Tensor,
    /// Learned `1×D` query (argmax retrieval only).
    pub query_const: Option<Tensor>,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
}

fn linear<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng)
}

fn embedding<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Tensor {
    Tensor::normal(&[rows, dim], 1.0 / (dim as f64).sqrt(), rng)
}

impl ModelParams {
    /// Fresh parameters. The draw order does not depend on `mode`, so models
    /// that differ only in normalization start from identical weights.
    pub fn init<R: Rng + ?Sized>(
        model: &ModelConfig,
        task: &TaskConfig,
        mode: NormMode,
        rng: &mut R,
    ) -> Result<Self> {
        model.validate()?;
        task.validate()?;
        let d = model.d_model;
        let w_q = linear(d, d, rng);
        let w_k = linear(d, d, rng);
        let w_v = linear(d, d, rng);
        let w_o = linear(d, d, rng);
        let key_emb = embedding(task.key_classes, model.d_key, rng);
        let value_emb = embedding(task.value_classes, model.d_value(), rng);
        let query_const = match task.kind {
            TaskKind::Argmax => Some(embedding(1, d, rng)),
            TaskKind::Dict => None,
        };
        let w1 = linear(d, model.hidden, rng);
        let b1 = Tensor::zeros(&[model.hidden]);
        let w2 = linear(model.hidden, task.value_classes, rng);
        let (gamma, beta) = match mode {
            NormMode::LayerNorm => (Some(Tensor::full(&[d], 1.0)), Some(Tensor::zeros(&[d]))),
            _ => (None, None),
        };
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o,
            gamma,
            beta,
            eps_norm: model.eps_norm,
            key_emb,
            value_emb,
            query_const,
            w1,
            b1,
            w2,
        })
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_key(&self) -> usize {
        self.key_emb.cols()
    }

    pub fn value_classes(&self) -> usize {
        self.w2.cols()
    }

    /// Every present tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
        ];
        if let Some(g) = &self.gamma {
            out.push(("gamma", g));
        }
        if let Some(b) = &self.beta {
            out.push(("beta", b));
        }
        out.push(("key_emb", &self.key_emb));
        out.push(("value_emb", &self.value_emb));
        if let Some(q) = &self.query_const {
            out.push(("query_const", q));
        }
        out.extend([("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2)]);
        out
    }

    /// Mutable view in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o];
        if let Some(g) = &mut self.gamma {
            out.push(g);
        }
        if let Some(b) = &mut self.beta {
            out.push(b);
        }
        out.push(&mut self.key_emb);
        out.push(&mut self.value_emb);
        if let Some(q) = &mut self.query_const {
            out.push(q);
        }
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2]);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}
