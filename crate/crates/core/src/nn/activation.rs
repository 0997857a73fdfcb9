use crate::autograd::Var;
use crate::error::Result;
use crate::real::Real;

pub fn relu<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    let value = x.value().map(|v| if v > F::zero() { v } else { F::zero() });
    x.tape().op(
        "relu",
        &[x],
        value,
        Box::new(|ctx| {
            // subgradient 0 at x = 0
            let g = ctx
                .grad
                .zip_map(ctx.inputs[0], |g, x| if x > F::zero() { g } else { F::zero() })
                .expect("same shape");
            vec![Some(g)]
        }),
    )
}

/// Logistic function, evaluated piecewise so neither branch overflows.
///
/// Saturated results are held at the nearest representable values inside
/// the open interval (0, 1).
pub fn sigmoid_scalar<F: Real>(x: F) -> F {
    let y = if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    };
    y.max(F::min_positive_value()).min(F::one() - F::epsilon())
}

pub fn sigmoid<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    let value = x.value().map(sigmoid_scalar);
    x.tape().op(
        "sigmoid",
        &[x],
        value,
        Box::new(|ctx| {
            let g = ctx
                .grad
                .zip_map(ctx.output, |g, y| g * y * (F::one() - y))
                .expect("same shape");
            vec![Some(g)]
        }),
    )
}
