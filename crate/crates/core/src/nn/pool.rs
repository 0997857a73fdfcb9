use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// 2x2 max-pooling with stride 2.
///
/// Saves the flat argmax index of every window; backward routes each output
/// gradient to that single input position. Ties go to the first element in
/// row-major window order.
pub fn maxpool2d<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    let x_rc = x.value();
    let xv: &Tensor<F> = &x_rc;
    let (n, c, h, w) = xv.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatialDim { h, w });
    }
    let (ho, wo) = (h / 2, w / 2);
    let planes = n * c;
    let per_plane: Vec<(Vec<F>, Vec<usize>)> = par::map_indexed(planes, |pl| {
        let src = &xv.data()[pl * h * w..(pl + 1) * h * w];
        let mut vals = Vec::with_capacity(ho * wo);
        let mut idx = Vec::with_capacity(ho * wo);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = (2 * oy + dy) * w + 2 * ox + dx;
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                vals.push(src[best]);
                idx.push(pl * h * w + best);
            }
        }
        (vals, idx)
    });
    let mut data = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    for (v, i) in per_plane {
        data.extend(v);
        argmax.extend(i);
    }
    let value = Tensor::new([n, c, ho, wo], data)?;
    x.tape().op(
        "maxpool2d",
        &[x],
        value,
        Box::new(move |ctx| {
            let mut dx = Tensor::zeros(ctx.inputs[0].shape().to_vec());
            let d = dx.data_mut();
            for (&i, &g) in argmax.iter().zip(ctx.grad.data()) {
                d[i] += g;
            }
            vec![Some(dx)]
        }),
    )
}
