//! Central-difference gradient verification harness.

use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor};

/// Compare the tape gradient of `f` with central differences at `theta`.
///
/// `f` must rebuild the scalar loss from scratch on the tape it is given and
/// must capture `theta` (the same handle) so in-place perturbations are
/// visible. Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
///
/// `theta` is restored on return; its gradient (and gradients of any other
/// tensors `f` touches) are left as the analytic pass wrote them.
pub fn grad_check<F>(f: F, theta: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tape) -> Result<Tensor>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "grad_check step {eps} outside [1e-6, 1e-3]"
        )));
    }

    let tape = Tape::new();
    let loss = f(&tape)?;
    if loss.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.item().is_finite() {
        return Err(Error::Numeric("grad_check: f(theta) is not finite".to_string()));
    }
    theta.zero_grad();
    tape.backward(&loss)?;
    let analytic = theta.grad_or_zeros();

    let mut max_err: f64 = 0.0;
    for i in 0..theta.len() {
        let orig = theta.get(i);
        theta.set(i, orig + eps);
        let plus = eval_scalar(&f);
        theta.set(i, orig - eps);
        let minus = eval_scalar(&f);
        theta.set(i, orig);
        let (plus, minus) = (plus?, minus?);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "grad_check: f not finite near theta (coordinate {i})"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = 1.0_f64.max(analytic[i].abs()).max(numeric.abs());
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_err)
}

fn eval_scalar<F>(f: &F) -> Result<f64>
where
    F: Fn(&Tape) -> Result<Tensor>,
{
    let tape = Tape::new();
    let out = f(&tape)?;
    if out.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            out.shape()
        )));
    }
    Ok(out.item())
}
