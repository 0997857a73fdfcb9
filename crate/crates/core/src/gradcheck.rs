//! Finite-difference gradient checking.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Compares the tape gradient of scalar `f` at `x` against five-point
/// central differences with step `eps` (truncation error `O(eps^4)`).
///
/// Returns `max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8)`.
pub fn grad_check<F, G>(f: G, x: &Tensor<F>, eps: f64) -> Result<f64>
where
    F: Real,
    G: for<'t> Fn(&'t Tape<F>, Var<'t, F>) -> Result<Var<'t, F>>,
{
    let analytic = analytic_grad(&f, x)?;
    let numeric = numeric_grad(&f, x, eps)?;
    Ok(max_rel_error(&analytic, &numeric))
}

/// Pins a closure to the higher-ranked signature the checkers expect, so it
/// can be bound with `let` and reused.
pub fn scalar_fn<F, G>(f: G) -> G
where
    F: Real,
    G: for<'t> Fn(&'t Tape<F>, Var<'t, F>) -> Result<Var<'t, F>>,
{
    f
}

pub fn analytic_grad<F, G>(f: &G, x: &Tensor<F>) -> Result<Tensor<F>>
where
    F: Real,
    G: for<'t> Fn(&'t Tape<F>, Var<'t, F>) -> Result<Var<'t, F>>,
{
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&tape, xv)?;
    let mut grads = tape.backward(y)?;
    let g = grads
        .take(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    if !g.all_finite() {
        return Err(Error::NonFiniteGradient("analytic gradient".into()));
    }
    Ok(g)
}

pub fn numeric_grad<F, G>(f: &G, x: &Tensor<F>, eps: f64) -> Result<Tensor<F>>
where
    F: Real,
    G: for<'t> Fn(&'t Tape<F>, Var<'t, F>) -> Result<Var<'t, F>>,
{
    let eval = |x: Tensor<F>| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.constant(x);
        Ok(f(&tape, xv)?.value().item()?.as_f64())
    };
    let at = |i: usize, delta: f64| -> Result<f64> {
        let mut moved = x.clone();
        moved.data_mut()[i] += F::of(delta);
        eval(moved)
    };
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        // grouped as differences so an input with no effect gives exactly 0
        let near = at(i, eps)? - at(i, -eps)?;
        let far = at(i, 2.0 * eps)? - at(i, -2.0 * eps)?;
        let d = (8.0 * near - far) / (12.0 * eps);
        if !d.is_finite() {
            return Err(Error::NonFiniteGradient(format!("numeric gradient at {i}")));
        }
        out.push(F::of(d));
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn max_rel_error<F: Real>(analytic: &Tensor<F>, numeric: &Tensor<F>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| {
            let (a, n) = (a.as_f64(), n.as_f64());
            (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::<f64>::from_f64([4], &[0.3, -1.2, 2.0, 5.5]).unwrap();
        let err = grad_check(|_, x| x.sum(), &x, 1e-3).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn square_matches_hand_derivative() {
        let x = Tensor::<f64>::from_f64([1], &[3.0]).unwrap();
        let f = scalar_fn(|_: &Tape<f64>, x: Var<'_, f64>| x.mul(x)?.sum());
        let g = analytic_grad(&f, &x).unwrap();
        assert_eq!(g.data(), &[6.0]);
        let n = numeric_grad(&f, &x, 1e-3).unwrap();
        assert!((n.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn product_rule_against_differences() {
        let y = Tensor::<f64>::from_f64([1], &[5.0]).unwrap();
        let f = scalar_fn(move |tape: &Tape<f64>, x: Var<'_, f64>| {
            let y = tape.constant(y.clone());
            x.mul(y)?.sum()
        });
        let x = Tensor::<f64>::from_f64([1], &[2.0]).unwrap();
        let n = numeric_grad(&f, &x, 1e-3).unwrap();
        assert!((n.data()[0] - 5.0).abs() < 1e-9);
        assert!(grad_check(f, &x, 1e-3).unwrap() < 1e-5);
    }
}
