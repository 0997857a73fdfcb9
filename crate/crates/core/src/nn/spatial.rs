use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Interpolation taps `(lo, hi, weight_of_hi)` for each output coordinate.
///
/// Half-pixel centers (align-corners = false): output `d` samples source
/// coordinate `(d + 0.5) * in / out - 0.5`, clamped below at 0.
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn resize_plane<F: Real>(
    src: &[F],
    w: usize,
    rows: &[(usize, usize, f64)],
    cols: &[(usize, usize, f64)],
    dst: &mut [F],
) {
    let ow = cols.len();
    for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
        let ly = F::of(ly);
        for (ox, &(x0, x1, lx)) in cols.iter().enumerate() {
            let lx = F::of(lx);
            let top = src[y0 * w + x0] * (F::one() - lx) + src[y0 * w + x1] * lx;
            let bottom = src[y1 * w + x0] * (F::one() - lx) + src[y1 * w + x1] * lx;
            dst[oy * ow + ox] = top * (F::one() - ly) + bottom * ly;
        }
    }
}

fn check_out(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidGeometry(format!(
            "resize target {out_h}x{out_w}"
        )));
    }
    Ok(())
}

/// Bilinear resize of every plane of an `[N, C, H, W]` tensor.
pub fn resize_bilinear_forward<F: Real>(x: &Tensor<F>, out_h: usize, out_w: usize) -> Result<Tensor<F>> {
    check_out(out_h, out_w)?;
    let (n, c, h, w) = x.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::InvalidGeometry(format!("resize source {h}x{w}")));
    }
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);
    let mut out = vec![F::zero(); n * c * out_h * out_w];
    par::for_each_chunk_mut(&mut out, out_h * out_w, |pl, dst| {
        resize_plane(&x.data()[pl * h * w..(pl + 1) * h * w], w, &rows, &cols, dst);
    });
    Tensor::new([n, c, out_h, out_w], out)
}

/// Differentiable bilinear resize (align-corners = false).
///
/// Backward scatters each output gradient onto its four source pixels with
/// the interpolation weights, so gradients reach the resized tensor's
/// producer.
pub fn resize_bilinear<'t, F: Real>(x: Var<'t, F>, out_h: usize, out_w: usize) -> Result<Var<'t, F>> {
    let value = resize_bilinear_forward(&x.value(), out_h, out_w)?;
    let (_, _, h, w) = x.value().dims4()?;
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);
    x.tape().op(
        "resize_bilinear",
        &[x],
        value,
        Box::new(move |ctx| {
            let mut dx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
            par::for_each_chunk_mut(dx.data_mut(), h * w, |pl, dst| {
                let g = &ctx.grad.data()[pl * out_h * out_w..(pl + 1) * out_h * out_w];
                for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
                    let ly = F::of(ly);
                    for (ox, &(x0, x1, lx)) in cols.iter().enumerate() {
                        let lx = F::of(lx);
                        let gv = g[oy * out_w + ox];
                        let top = gv * (F::one() - ly);
                        let bottom = gv * ly;
                        dst[y0 * w + x0] += top * (F::one() - lx);
                        dst[y0 * w + x1] += top * lx;
                        dst[y1 * w + x0] += bottom * (F::one() - lx);
                        dst[y1 * w + x1] += bottom * lx;
                    }
                }
            });
            vec![Some(dx)]
        }),
    )
}

/// Nearest-neighbour resize of a single `h x w` plane: output `d` copies
/// source `floor(d * in / out)`. Values are copied, never blended.
pub fn resize_nearest_plane<T: Copy>(src: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    let ys: Vec<usize> = (0..out_h).map(|d| (d * h / out_h).min(h - 1)).collect();
    let xs: Vec<usize> = (0..out_w).map(|d| (d * w / out_w).min(w - 1)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &y in &ys {
        out.extend(xs.iter().map(|&x| src[y * w + x]));
    }
    out
}

/// Crops the centered `out_h x out_w` window; offset is `floor((H - out_h) / 2)`.
pub fn center_crop<'t, F: Real>(x: Var<'t, F>, out_h: usize, out_w: usize) -> Result<Var<'t, F>> {
    let xv = x.value();
    let (n, c, h, w) = xv.dims4()?;
    if out_h > h || out_w > w {
        return Err(Error::CropLargerThanInput { h, w, out_h, out_w });
    }
    check_out(out_h, out_w)?;
    let (top, left) = ((h - out_h) / 2, (w - out_w) / 2);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for pl in 0..n * c {
        for y in 0..out_h {
            let start = pl * h * w + (top + y) * w + left;
            out.extend_from_slice(&xv.data()[start..start + out_w]);
        }
    }
    let value = Tensor::new([n, c, out_h, out_w], out)?;
    x.tape().op(
        "center_crop",
        &[x],
        value,
        Box::new(move |ctx| {
            let mut dx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
            let d = dx.data_mut();
            let g = ctx.grad.data();
            for pl in 0..n * c {
                for y in 0..out_h {
                    let start = pl * h * w + (top + y) * w + left;
                    let gs = (pl * out_h + y) * out_w;
                    d[start..start + out_w].copy_from_slice(&g[gs..gs + out_w]);
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Concatenates along channels: `a`'s channels first, then `b`'s.
pub fn concat_channels<'t, F: Real>(a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    let av = a.value();
    let bv = b.value();
    let (n, ca, h, w) = av.dims4()?;
    let (nb, cb, hb, wb) = bv.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::ShapeMismatch(format!(
            "concat {:?} with {:?}",
            av.shape(),
            bv.shape()
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(av.numel() + bv.numel());
    for s in 0..n {
        out.extend_from_slice(&av.data()[s * ca * plane..(s + 1) * ca * plane]);
        out.extend_from_slice(&bv.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    let value = Tensor::new([n, ca + cb, h, w], out)?;
    a.tape().op(
        "concat_channels",
        &[a, b],
        value,
        Box::new(move |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad.slice_channels(0, ca).expect("channel range")),
                ctx.needs[1].then(|| ctx.grad.slice_channels(ca, cb).expect("channel range")),
            ]
        }),
    )
}
