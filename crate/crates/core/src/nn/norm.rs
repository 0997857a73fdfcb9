use super::Mode;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormOptions {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormOptions {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

pub struct BatchNormOutput<'t, F: Real> {
    pub output: Var<'t, F>,
    /// Updated `(running_mean, running_var)`; present in train mode only.
    pub running: Option<(Tensor<F>, Tensor<F>)>,
}

/// Per-channel batch normalization over `[N, C, H, W]`.
///
/// Train mode normalizes with the biased batch variance and returns running
/// statistics blended with `momentum` (unbiased variance). Eval mode is a
/// pure function of the input and the running statistics.
pub fn batchnorm2d<'t, F: Real>(
    x: Var<'t, F>,
    gamma: Var<'t, F>,
    beta: Var<'t, F>,
    running_mean: &Tensor<F>,
    running_var: &Tensor<F>,
    opts: BatchNormOptions,
    mode: Mode,
) -> Result<BatchNormOutput<'t, F>> {
    let x_rc = x.value();
    let xv: &Tensor<F> = &x_rc;
    let (n, c, h, w) = xv.dims4()?;
    for (name, t) in [
        ("gamma", gamma.value().shape().to_vec()),
        ("beta", beta.value().shape().to_vec()),
        ("running_mean", running_mean.shape().to_vec()),
        ("running_var", running_var.shape().to_vec()),
    ] {
        if t != [c] {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm {name} {t:?} for {c} channels"
            )));
        }
    }
    let plane = h * w;
    let count = n * plane;
    let eps = F::of(opts.eps);

    let (mean, var, running) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::DegenerateBatch(count));
            }
            let stats: Vec<(F, F)> = par::map_indexed(c, |ch| {
                let mut sum = F::zero();
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    sum += xv.data()[base..base + plane].iter().copied().sum::<F>();
                }
                let mean = sum / F::of(count as f64);
                let mut sq = F::zero();
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    for &v in &xv.data()[base..base + plane] {
                        let d = v - mean;
                        sq += d * d;
                    }
                }
                (mean, sq / F::of(count as f64))
            });
            let (mean, var): (Vec<F>, Vec<F>) = stats.into_iter().unzip();
            let m = F::of(opts.momentum);
            let unbias = F::of(count as f64 / (count - 1) as f64);
            let rm = Tensor::from_fn([c], |i| (F::one() - m) * running_mean.data()[i] + m * mean[i]);
            let rv = Tensor::from_fn([c], |i| {
                (F::one() - m) * running_var.data()[i] + m * var[i] * unbias
            });
            (mean, var, Some((rm, rv)))
        }
        Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec(), None),
    };
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();

    let (g_rc, b_rc) = (gamma.value(), beta.value());
    let (gv, bv): (&Tensor<F>, &Tensor<F>) = (&g_rc, &b_rc);
    let mut xhat = vec![F::zero(); xv.numel()];
    let mut out = vec![F::zero(); xv.numel()];
    par::for_each_chunk_mut(&mut xhat, plane.max(1), |pl, dst| {
        let ch = pl % c;
        let src = &xv.data()[pl * plane..(pl + 1) * plane];
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - mean[ch]) * inv_std[ch];
        }
    });
    par::for_each_chunk_mut(&mut out, plane.max(1), |pl, dst| {
        let ch = pl % c;
        let src = &xhat[pl * plane..(pl + 1) * plane];
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = gv.data()[ch] * v + bv.data()[ch];
        }
    });
    let value = Tensor::new(xv.shape().to_vec(), out)?;
    let xhat = Tensor::new(xv.shape().to_vec(), xhat)?;

    let output = x.tape().op(
        "batchnorm2d",
        &[x, gamma, beta],
        value,
        Box::new(move |ctx| {
            let g = ctx.grad;
            let gamma = ctx.inputs[1].data();
            // per-channel sums of g and g * xhat
            let sums: Vec<(F, F)> = par::map_indexed(c, |ch| {
                let (mut sg, mut sgx) = (F::zero(), F::zero());
                for s in 0..n {
                    let base = (s * c + ch) * plane;
                    for i in base..base + plane {
                        sg += g.data()[i];
                        sgx += g.data()[i] * xhat.data()[i];
                    }
                }
                (sg, sgx)
            });
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![F::zero(); g.numel()];
                let m = F::of(count as f64);
                par::for_each_chunk_mut(&mut dx, plane.max(1), |pl, dst| {
                    let ch = pl % c;
                    let k = gamma[ch] * inv_std[ch];
                    let (sg, sgx) = sums[ch];
                    let base = pl * plane;
                    for (i, d) in dst.iter_mut().enumerate() {
                        let gi = g.data()[base + i];
                        *d = match mode {
                            Mode::Train => {
                                k / m * (m * gi - sg - xhat.data()[base + i] * sgx)
                            }
                            Mode::Eval => k * gi,
                        };
                    }
                });
                Tensor::new(g.shape().to_vec(), dx).expect("dx shape")
            });
            let dgamma = ctx.needs[1]
                .then(|| Tensor::new([c], sums.iter().map(|s| s.1).collect()).expect("dgamma"));
            let dbeta = ctx.needs[2]
                .then(|| Tensor::new([c], sums.iter().map(|s| s.0).collect()).expect("dbeta"));
            vec![dx, dgamma, dbeta]
        }),
    )?;
    Ok(BatchNormOutput { output, running })
}
