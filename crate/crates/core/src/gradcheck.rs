//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` receives a fresh tape and one parameter [`Var`] per entry of `params`
/// and must return a scalar. Returns the maximum over all parameter entries of
/// `|autodiff - central| / max(1, |central|)`.
///
/// `f` is evaluated twice at the unperturbed point first; any difference
/// between the two values means it draws randomness internally, which makes
/// the comparison meaningless, so that is reported as [`Error::Oracle`].
pub fn grad_check<F>(mut f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("grad_check eps must be > 0, got {eps}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(&tape, *v)).collect();

    let mut probe = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let again = probe(params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {base} then {again}"
        )));
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..work[pi].numel() {
            let original = work[pi].data()[k];
            work[pi].data_mut()[k] = original + eps;
            let up = probe(&work)?;
            work[pi].data_mut()[k] = original - eps;
            let down = probe(&work)?;
            work[pi].data_mut()[k] = original;

            let central = (up - down) / (2.0 * eps);
            let err = (grad.data()[k] - central).abs() / central.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_nearly_exact() {
        let err = grad_check(|t, p| t.square(p[0]), &[Tensor::scalar(2.0)], 1e-6).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let mut calls = 0.0;
        let res = grad_check(
            |t, p| {
                calls += 1.0;
                t.scale(p[0], calls)
            },
            &[Tensor::scalar(1.0)],
            1e-6,
        );
        assert!(matches!(res, Err(Error::Oracle(_))));
    }

    #[test]
    fn bad_eps() {
        assert!(grad_check(|t, p| t.square(p[0]), &[Tensor::scalar(1.0)], 0.0).is_err());
    }
}
