use crate::backward::backward;
use crate::error::{AdError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Central-difference check of a scalar function's gradient.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|)` over all
/// coordinates of `at`. `f` must be deterministic.
pub fn grad_check<F>(f: F, at: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if !(eps > 0.0) {
        return Err(AdError::Contract(format!("grad_check step must be positive, got {eps}")));
    }
    let analytic = {
        let tape = Tape::new();
        let x = tape.leaf(at.clone())?;
        let y = f(&tape, x)?;
        let grads = backward(&tape, y)?;
        grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(at.shape()))
    };
    let eval = |point: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(point)?;
        Ok(f(&tape, x)?.item())
    };
    let mut worst: f64 = 0.0;
    for k in 0..at.len() {
        let mut plus = at.clone();
        plus.data_mut()[k] += eps;
        let mut minus = at.clone();
        minus.data_mut()[k] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[k];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
