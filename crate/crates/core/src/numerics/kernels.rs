//! Row kernels shared by the recorded ops and the inference fast path.

/// Stable softmax of `row · inv_temp`, in place.
pub fn softmax_in_place(row: &mut [f64], inv_temp: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) * inv_temp).exp();
        total += *v;
    }
    let inv = 1.0 / total;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Shannon entropy (nats) of a probability row.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Entropy of `softmax(inv_temp · logits)` without allocating.
pub fn softmax_entropy(logits: &[f64], inv_temp: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // H = ln Z − E[s] with s = inv_temp·(l − max)
    let mut z = 0.0;
    let mut weighted = 0.0;
    for &l in logits {
        let s = (l - max) * inv_temp;
        let e = s.exp();
        z += e;
        weighted += e * s;
    }
    (z.ln() - weighted / z).max(0.0)
}

/// Mean and population standard deviation of a row.
pub fn mean_std(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(o − μ)/(σ + ε)` in place; returns σ.
pub fn standardize_in_place(row: &mut [f64], eps: f64) -> f64 {
    let (mean, std) = mean_std(row);
    let denom = std + eps;
    for v in row.iter_mut() {
        let c = *v - mean;
        // A constant row with ε = 0 maps to zeros rather than NaN.
        *v = if denom > 0.0 { c / denom } else { 0.0 };
    }
    std
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_row() {
        let mut r = [3.0; 4];
        softmax_in_place(&mut r, 7.0);
        assert!(r.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_ln2() {
        let mut r = [0.0, 2f64.ln()];
        softmax_in_place(&mut r, 1.0);
        assert!((r[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_sharp() {
        let mut r = [0.0, 1.0, 2.0];
        softmax_in_place(&mut r, 100.0);
        assert!(r[2] > 0.999);
    }

    #[test]
    fn entropy_matches_direct() {
        let logits = [0.3, -1.0, 2.0, 0.0];
        let mut p = logits;
        softmax_in_place(&mut p, 1.7);
        assert!((entropy(&p) - softmax_entropy(&logits, 1.7)).abs() < 1e-12);
        assert!((softmax_entropy(&[1.0; 8], 3.0) - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn standardize_fixture() {
        let mut r = [1.0, 2.0, 3.0];
        let s = standardize_in_place(&mut r, 0.0);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let expect = 1.224744871391589;
        assert!((r[0] + expect).abs() < 1e-12);
        assert!(r[1].abs() < 1e-15);
        assert!((r[2] - expect).abs() < 1e-12);
    }
}
