use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Weights and geometry of a 2-D convolution.
///
/// `weight` is `[out_ch, in_ch, kH, kW]`, `bias` is `[out_ch]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams<F: Real> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [n, cin, h, w] = input[..] else {
            return Err(Error::ShapeMismatch(format!("conv2d input {input:?} is not 4-D")));
        };
        let [cout, wcin, kh, kw] = weight[..] else {
            return Err(Error::ShapeMismatch(format!("conv2d weight {weight:?} is not 4-D")));
        };
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv2d input has {cin} channels, weight expects {wcin}"
            )));
        }
        if stride == 0 || kh == 0 || kw == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::InvalidGeometry(format!(
                "conv2d {h}x{w} input, {kh}x{kw} kernel, stride {stride}, padding {pad}"
            )));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input offset feeding output `(oy, ox)` through tap `(ki, kj)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ki).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kj).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }

    /// Unfolds one `[Cin, H, W]` sample into a `[K, P]` patch matrix.
    fn im2col<F: Real>(&self, x: &[F], cols: &mut [F]) {
        let p = self.p();
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            cols[row + oy * self.wo + ox] = match self.source(oy, ox, ki, kj) {
                                Some((iy, ix)) => plane[iy * self.w + ix],
                                None => F::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatter-adds patches back into a sample.
    fn col2im<F: Real>(&self, cols: &[F], x: &mut [F]) {
        let p = self.p();
        for c in 0..self.cin {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some((iy, ix)) = self.source(oy, ox, ki, kj) {
                                plane[iy * self.w + ix] += cols[row + oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn patches<F: Real>(&self, sample: &[F]) -> Vec<F> {
        if self.is_pointwise() {
            return sample.to_vec();
        }
        let mut cols = vec![F::zero(); self.k() * self.p()];
        self.im2col(sample, &mut cols);
        cols
    }
}

fn conv_forward_raw<F: Real>(
    g: &Geometry,
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Tensor<F> {
    let (k, p) = (g.k(), g.p());
    let per_out = g.cout * p;
    let mut out = vec![F::zero(); g.n * per_out];
    par::for_each_chunk_mut(&mut out, per_out, |s, out| {
        let cols = g.patches(x.sample(s));
        F::gemm(
            g.cout,
            k,
            p,
            F::one(),
            weight.data(),
            k as isize,
            1,
            &cols,
            p as isize,
            1,
            F::zero(),
            out,
            p as isize,
            1,
        );
        if let Some(b) = bias {
            for (co, row) in out.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Tensor::new([g.n, g.cout, g.ho, g.wo], out).expect("conv output shape")
}

/// Tensor-level convolution without recording on a tape.
pub fn conv2d_forward<F: Real>(input: &Tensor<F>, p: &Conv2dParams<F>) -> Result<Tensor<F>> {
    let g = Geometry::new(input.shape(), p.weight.shape(), p.stride, p.padding)?;
    check_bias(p.bias.as_ref().map(|b| b.shape()), g.cout)?;
    Ok(conv_forward_raw(&g, input, &p.weight, p.bias.as_ref()))
}

fn check_bias(shape: Option<&[usize]>, cout: usize) -> Result<()> {
    match shape {
        Some(s) if s != [cout] => Err(Error::ShapeMismatch(format!(
            "bias {s:?} for {cout} output channels"
        ))),
        _ => Ok(()),
    }
}

/// 2-D cross-correlation `y = w * x + b` with zero padding.
///
/// Output spatial size is `(H + 2*padding - kH) / stride + 1`. Backward
/// yields gradients for the input, weight and bias; patches are rebuilt
/// from the input instead of being kept alive between passes.
pub fn conv2d<'t, F: Real>(
    x: Var<'t, F>,
    weight: Var<'t, F>,
    bias: Option<Var<'t, F>>,
    stride: usize,
    padding: usize,
) -> Result<Var<'t, F>> {
    let xv = x.value();
    let wv = weight.value();
    let g = Geometry::new(xv.shape(), wv.shape(), stride, padding)?;
    let bv = bias.map(|b| b.value());
    check_bias(bv.as_ref().map(|b| b.shape()), g.cout)?;
    let value = conv_forward_raw(&g, &xv, &wv, bv.as_deref());

    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    x.tape().op(
        "conv2d",
        &inputs,
        value,
        Box::new(move |ctx| {
            let (x, w, gout) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let (k, p) = (g.k(), g.p());
            let need_x = ctx.needs[0];
            let need_w = ctx.needs[1];
            // per-sample (dx, dw) so the weight reduction runs in sample order
            let parts: Vec<(Option<Vec<F>>, Option<Vec<F>>)> = par::map_indexed(g.n, |s| {
                let go = gout.sample(s);
                let dx = need_x.then(|| {
                    let mut dcols = vec![F::zero(); k * p];
                    F::gemm(
                        k,
                        g.cout,
                        p,
                        F::one(),
                        w.data(),
                        1,
                        k as isize,
                        go,
                        p as isize,
                        1,
                        F::zero(),
                        &mut dcols,
                        p as isize,
                        1,
                    );
                    if g.is_pointwise() {
                        dcols
                    } else {
                        let mut dx = vec![F::zero(); g.cin * g.h * g.w];
                        g.col2im(&dcols, &mut dx);
                        dx
                    }
                });
                let dw = need_w.then(|| {
                    let cols = g.patches(x.sample(s));
                    let mut dw = vec![F::zero(); g.cout * k];
                    F::gemm(
                        g.cout,
                        p,
                        k,
                        F::one(),
                        go,
                        p as isize,
                        1,
                        &cols,
                        1,
                        p as isize,
                        F::zero(),
                        &mut dw,
                        k as isize,
                        1,
                    );
                    dw
                });
                (dx, dw)
            });

            let mut dx_all = need_x.then(|| Vec::with_capacity(x.numel()));
            let mut dw_all = need_w.then(|| vec![F::zero(); w.numel()]);
            for (dx, dw) in parts {
                if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                    all.extend(dx);
                }
                if let (Some(all), Some(dw)) = (dw_all.as_mut(), dw) {
                    all.iter_mut().zip(dw).for_each(|(a, d)| *a += d);
                }
            }
            let mut grads = vec![
                dx_all.map(|d| Tensor::new(x.shape().to_vec(), d).expect("dx shape")),
                dw_all.map(|d| Tensor::new(w.shape().to_vec(), d).expect("dw shape")),
            ];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| {
                    let mut db = vec![F::zero(); g.cout];
                    for s in 0..g.n {
                        for (co, row) in gout.sample(s).chunks(p).enumerate() {
                            db[co] += row.iter().copied().sum::<F>();
                        }
                    }
                    Tensor::new([g.cout], db).expect("db shape")
                }));
            }
            grads
        }),
    )
}

#[derive(Clone, Copy, Debug)]
struct UpGeometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
}

impl UpGeometry {
    fn new(input: &[usize], weight: &[usize], stride: usize) -> Result<Self> {
        let [n, cin, h, w] = input[..] else {
            return Err(Error::ShapeMismatch(format!(
                "conv_transpose2d input {input:?} is not 4-D"
            )));
        };
        let [wcin, cout, kh, kw] = weight[..] else {
            return Err(Error::ShapeMismatch(format!(
                "conv_transpose2d weight {weight:?} is not 4-D"
            )));
        };
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv_transpose2d input has {cin} channels, weight expects {wcin}"
            )));
        }
        if kh != kw || kh != stride || stride == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv_transpose2d needs a square kernel equal to the stride, got {kh}x{kw} stride {stride}"
            )));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
        })
    }

    /// Rows of the `[Cout*k*k, H*W]` tap matrix.
    fn rows(&self) -> usize {
        self.cout * self.k * self.k
    }

    /// Output offset within one sample for tap row `r` at input pixel `q`.
    #[inline]
    fn out_index(&self, r: usize, q: usize) -> usize {
        let (co, tap) = (r / (self.k * self.k), r % (self.k * self.k));
        let (a, b) = (tap / self.k, tap % self.k);
        let (i, j) = (q / self.w, q % self.w);
        let (oh, ow) = (self.h * self.k, self.w * self.k);
        (co * oh + i * self.k + a) * ow + j * self.k + b
    }
}

fn conv_transpose_raw<F: Real>(g: &UpGeometry, x: &Tensor<F>, weight: &Tensor<F>) -> Tensor<F> {
    let (rows, q) = (g.rows(), g.h * g.w);
    let per_out = rows * q;
    let mut out = vec![F::zero(); g.n * per_out];
    par::for_each_chunk_mut(&mut out, per_out, |s, out| {
        let mut taps = vec![F::zero(); rows * q];
        F::gemm(
            rows,
            g.cin,
            q,
            F::one(),
            weight.data(),
            1,
            rows as isize,
            x.sample(s),
            q as isize,
            1,
            F::zero(),
            &mut taps,
            q as isize,
            1,
        );
        for r in 0..rows {
            for p in 0..q {
                out[g.out_index(r, p)] = taps[r * q + p];
            }
        }
    });
    Tensor::new([g.n, g.cout, g.h * g.k, g.w * g.k], out).expect("conv_transpose shape")
}

/// Tensor-level transposed convolution without recording on a tape.
pub fn conv_transpose2d_forward<F: Real>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    stride: usize,
) -> Result<Tensor<F>> {
    let g = UpGeometry::new(input.shape(), weight.shape(), stride)?;
    Ok(conv_transpose_raw(&g, input, weight))
}

/// Transposed convolution with a `stride x stride` kernel, weight
/// `[in_ch, out_ch, k, k]`; spatial dims grow by the stride.
///
/// Kernel windows never overlap, so each output pixel receives exactly one
/// tap. This is the adjoint of [`conv2d`] with the same weight, stride `k`
/// and no padding.
pub fn conv_transpose2d<'t, F: Real>(
    x: Var<'t, F>,
    weight: Var<'t, F>,
    stride: usize,
) -> Result<Var<'t, F>> {
    let g = UpGeometry::new(&x.shape(), &weight.shape(), stride)?;
    let value = conv_transpose_raw(&g, &x.value(), &weight.value());
    x.tape().op(
        "conv_transpose2d",
        &[x, weight],
        value,
        Box::new(move |ctx| {
            let (x, w, gout) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let (rows, q) = (g.rows(), g.h * g.w);
            let (need_x, need_w) = (ctx.needs[0], ctx.needs[1]);
            let parts: Vec<(Option<Vec<F>>, Option<Vec<F>>)> = par::map_indexed(g.n, |s| {
                let go = gout.sample(s);
                let mut gtaps = vec![F::zero(); rows * q];
                for r in 0..rows {
                    for p in 0..q {
                        gtaps[r * q + p] = go[g.out_index(r, p)];
                    }
                }
                let dx = need_x.then(|| {
                    let mut dx = vec![F::zero(); g.cin * q];
                    F::gemm(
                        g.cin,
                        rows,
                        q,
                        F::one(),
                        w.data(),
                        rows as isize,
                        1,
                        &gtaps,
                        q as isize,
                        1,
                        F::zero(),
                        &mut dx,
                        q as isize,
                        1,
                    );
                    dx
                });
                let dw = need_w.then(|| {
                    let mut dw = vec![F::zero(); g.cin * rows];
                    F::gemm(
                        g.cin,
                        q,
                        rows,
                        F::one(),
                        x.sample(s),
                        q as isize,
                        1,
                        &gtaps,
                        1,
                        q as isize,
                        F::zero(),
                        &mut dw,
                        rows as isize,
                        1,
                    );
                    dw
                });
                (dx, dw)
            });
            let mut dx_all = need_x.then(|| Vec::with_capacity(x.numel()));
            let mut dw_all = need_w.then(|| vec![F::zero(); w.numel()]);
            for (dx, dw) in parts {
                if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                    all.extend(dx);
                }
                if let (Some(all), Some(dw)) = (dw_all.as_mut(), dw) {
                    all.iter_mut().zip(dw).for_each(|(a, d)| *a += d);
                }
            }
            vec![
                dx_all.map(|d| Tensor::new(x.shape().to_vec(), d).expect("dx shape")),
                dw_all.map(|d| Tensor::new(w.shape().to_vec(), d).expect("dw shape")),
            ]
        }),
    )
}
