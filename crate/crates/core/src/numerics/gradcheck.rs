use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Worst componentwise relative error between reverse-mode and central
/// finite-difference gradients of `f` at `inputs`.
///
/// `f` receives a fresh tape and one trainable leaf per input and must return
/// a scalar. Relative error is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[which].len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = inputs[which].data()[i];
            work[which].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[which].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[which].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
