use super::{normalize_in_place, ModelParams, NormMode, TempMode};
use crate::error::{Error, Result};
use crate::numerics::kernels::softmax_in_place;
use crate::numerics::{axpy, dot, Tensor};
use crate::tasks::Example;

/// Gradient-free evaluation path.
///
/// Items are `[key_emb[k] ‖ value_emb[v]]`, so every projection of an item
/// splits into a key-class part and a value-class part. Both parts are
/// tabulated once per model, which makes scoring an item an `O(D)` lookup and
/// dot product instead of an `O(D²)` projection.
#[derive(Debug, Clone)]
pub struct Inference<'a> {
    params: &'a ModelParams,
    mode: NormMode,
    d: usize,
    scale: f64,
    key_k: Tensor,
    value_k: Tensor,
    key_v: Tensor,
    value_v: Tensor,
    w_q_key: Tensor,
    /// Pre-scaled per-class scores when the query is the learned constant.
    const_scores: Option<(Vec<f64>, Vec<f64>)>,
}

/// Reusable per-thread buffers.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    weights: Vec<f64>,
    output: Vec<f64>,
    query: Vec<f64>,
    value_scores: Vec<f64>,
    value_mass: Vec<f64>,
}

impl Scratch {
    /// Attention weights of the last [`Inference::attend`] call.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Attention output `O` (before normalization) of the last call.
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl<'a> Inference<'a> {
    pub fn new(params: &'a ModelParams, mode: NormMode) -> Result<Self> {
        if mode == NormMode::LayerNorm && (params.gamma.is_none() || params.beta.is_none()) {
            return Err(Error::Contract("layernorm model without gamma/beta".into()));
        }
        let d = params.d_model();
        let dk = params.d_key();
        let split = |w: &Tensor| (w.slice_rows(0, dk), w.slice_rows(dk, d));
        let (wk_key, wk_val) = split(&params.w_k);
        let (wv_key, wv_val) = split(&params.w_v);
        let key_k = params.key_emb.matmul(&wk_key)?;
        let value_k = params.value_emb.matmul(&wk_val)?;
        let key_v = params.key_emb.matmul(&wv_key)?;
        let value_v = params.value_emb.matmul(&wv_val)?;
        let scale = 1.0 / (d as f64).sqrt();
        let const_scores = match &params.query_const {
            Some(qc) => {
                let q = qc.matmul(&params.w_q)?;
                let q = q.data();
                let per_class =
                    |t: &Tensor| (0..t.rows()).map(|r| scale * dot(q, t.row_slice(r))).collect();
                Some((per_class(&key_k), per_class(&value_k)))
            }
            None => None,
        };
        Ok(Self {
            params,
            mode,
            d,
            scale,
            key_k,
            value_k,
            key_v,
            value_v,
            w_q_key: params.w_q.slice_rows(0, dk),
            const_scores,
        })
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    /// Attention weights and pre-normalization output for one example,
    /// left in `scratch`.
    pub fn attend(&self, ex: &Example<'_>, temp: TempMode, scratch: &mut Scratch) -> Result<()> {
        let n = ex.keys.len();
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        let n_values = self.value_k.rows();
        scratch.weights.clear();
        match (ex.query, &self.const_scores) {
            (Some(qc), _) => {
                let q = self.params.key_emb.row_slice(qc as usize);
                scratch.query.clear();
                scratch.query.resize(self.d, 0.0);
                for (j, &qj) in q.iter().enumerate() {
                    axpy(qj, self.w_q_key.row_slice(j), &mut scratch.query);
                }
                let q = &scratch.query;
                scratch.value_scores.clear();
                scratch
                    .value_scores
                    .extend((0..n_values).map(|c| self.scale * dot(q, self.value_k.row_slice(c))));
                for (&k, &v) in ex.keys.iter().zip(ex.values) {
                    let s = self.scale * dot(q, self.key_k.row_slice(k as usize));
                    scratch.weights.push(s + scratch.value_scores[v as usize]);
                }
            }
            (None, Some((key_scores, value_scores))) => {
                scratch.weights.extend(
                    ex.keys
                        .iter()
                        .zip(ex.values)
                        .map(|(&k, &v)| key_scores[k as usize] + value_scores[v as usize]),
                );
            }
            (None, None) => {
                return Err(Error::Contract("example has no query and model has no constant query".into()))
            }
        }
        if scratch.weights.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("attention scores"));
        }
        let beta = temp.inv_temp(&scratch.weights);
        softmax_in_place(&mut scratch.weights, beta);

        scratch.output.clear();
        scratch.output.resize(self.d, 0.0);
        scratch.value_mass.clear();
        scratch.value_mass.resize(n_values, 0.0);
        for ((&k, &v), &a) in ex.keys.iter().zip(ex.values).zip(&scratch.weights) {
            axpy(a, self.key_v.row_slice(k as usize), &mut scratch.output);
            scratch.value_mass[v as usize] += a;
        }
        for (c, &m) in scratch.value_mass.iter().enumerate() {
            if m != 0.0 {
                axpy(m, self.value_v.row_slice(c), &mut scratch.output);
            }
        }
        Ok(())
    }

    /// Output after the model's normalization.
    pub fn normalized(&self, output: &[f64]) -> Result<Vec<f64>> {
        let mut row = output.to_vec();
        normalize_in_place(
            &mut row,
            self.mode,
            self.params.gamma.as_ref(),
            self.params.beta.as_ref(),
            self.params.eps_norm,
        )?;
        Ok(row)
    }

    /// Class logits from a pre-normalization attention output.
    pub fn head(&self, output: &[f64]) -> Result<Vec<f64>> {
        let p = self.params;
        let normed = Tensor::row(&self.normalized(output)?);
        let z = normed.matmul(&p.w_o)?;
        let mut h = z.matmul(&p.w1)?;
        for (v, b) in h.data_mut().iter_mut().zip(p.b1.data()) {
            *v = (*v + b).max(0.0);
        }
        Ok(h.matmul(&p.w2)?.into_data())
    }

    pub fn logits(&self, ex: &Example<'_>, temp: TempMode, scratch: &mut Scratch) -> Result<Vec<f64>> {
        self.attend(ex, temp, scratch)?;
        self.head(&scratch.output)
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, ex: &Example<'_>, temp: TempMode, scratch: &mut Scratch) -> Result<u32> {
        let logits = self.logits(ex, temp, scratch)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        Ok(best as u32)
    }
}
