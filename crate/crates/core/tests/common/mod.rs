//! Oracles and check suites shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unetseg::gradcheck::{grad_check, scalar_fn};
use unetseg::loss::{self, DiceMode, LossConfig};
use unetseg::nn::{self, BatchNormOptions, Mode};
use unetseg::{Result, Tape, Tensor, Var};

pub const GRAD_TOL: f64 = 1e-5;
pub const EPS: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values whose pairwise gaps and distance from zero are at least 0.01, so
/// a finite-difference step never crosses a relu kink or a max-pool tie.
pub fn separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) * 0.02).collect();
    levels.shuffle(rng);
    Tensor::from_fn(shape.to_vec(), |i| {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * (levels[i] + rng.random_range(0.0..0.005))
    })
}

pub fn binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
}

/// `sum(w * y)`: a scalar whose gradient exercises every output element.
pub fn project<'t>(y: Var<'t, f64>, w: &Tensor<f64>) -> Result<Var<'t, f64>> {
    y.mul(y.tape().constant(w.clone()))?.sum()
}

/// Worst relative error per operation over `cases` random instances.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst < GRAD_TOL
    }
}

fn run_cases(name: &'static str, cases: usize, seed: u64, mut case: impl FnMut(&mut ChaCha8Rng) -> Result<f64>) -> GradReport {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let mut r = rng(seed.wrapping_mul(1000) + i as u64);
        let e = case(&mut r).unwrap_or_else(|e| panic!("{name} case {i}: {e}"));
        worst = worst.max(e);
    }
    GradReport { name, cases, worst }
}

pub fn layer_gradient_reports(cases: usize) -> Vec<GradReport> {
    vec![
        run_cases("conv2d", cases, 1, |r| {
            let (n, cin, cout) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
            let k = r.random_range(1..4usize);
            let (stride, pad) = (r.random_range(1..3), r.random_range(0..k));
            let (h, w) = (r.random_range(k..k + 5), r.random_range(k..k + 5));
            let x = uniform(r, &[n, cin, h, w], -1.0, 1.0);
            let wt = uniform(r, &[cout, cin, k, k], -1.0, 1.0);
            let b = uniform(r, &[cout], -1.0, 1.0);
            let probe = nn::conv2d_forward(&x, &nn::Conv2dParams { weight: wt.clone(), bias: None, stride, padding: pad })?;
            let proj = uniform(r, probe.shape(), -1.0, 1.0);
            let (w1, b1, p1) = (wt.clone(), b.clone(), proj.clone());
            let ex = grad_check(
                scalar_fn(move |t: &Tape<f64>, x: Var<'_, f64>| {
                    let y = nn::conv2d(x, t.constant(w1.clone()), Some(t.constant(b1.clone())), stride, pad)?;
                    project(y, &p1)
                }),
                &x,
                EPS,
            )?;
            let (x2, b2, p2) = (x.clone(), b.clone(), proj.clone());
            let ew = grad_check(
                scalar_fn(move |t: &Tape<f64>, w: Var<'_, f64>| {
                    let y = nn::conv2d(t.constant(x2.clone()), w, Some(t.constant(b2.clone())), stride, pad)?;
                    project(y, &p2)
                }),
                &wt,
                EPS,
            )?;
            let eb = grad_check(
                scalar_fn(move |t: &Tape<f64>, b: Var<'_, f64>| {
                    let y = nn::conv2d(t.constant(x.clone()), t.constant(wt.clone()), Some(b), stride, pad)?;
                    project(y, &proj)
                }),
                &b,
                EPS,
            )?;
            Ok(ex.max(ew).max(eb))
        }),
        run_cases("conv_transpose2d", cases, 2, |r| {
            let (n, cin, cout) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
            let k = r.random_range(1..4usize);
            let (h, w) = (r.random_range(1..5), r.random_range(1..5));
            let x = uniform(r, &[n, cin, h, w], -1.0, 1.0);
            let wt = uniform(r, &[cin, cout, k, k], -1.0, 1.0);
            let proj = uniform(r, &[n, cout, h * k, w * k], -1.0, 1.0);
            let (w1, p1) = (wt.clone(), proj.clone());
            let ex = grad_check(
                scalar_fn(move |t: &Tape<f64>, x: Var<'_, f64>| project(nn::conv_transpose2d(x, t.constant(w1.clone()), k)?, &p1)),
                &x,
                EPS,
            )?;
            let ew = grad_check(
                scalar_fn(move |t: &Tape<f64>, w: Var<'_, f64>| project(nn::conv_transpose2d(t.constant(x.clone()), w, k)?, &proj)),
                &wt,
                EPS,
            )?;
            Ok(ex.max(ew))
        }),
        run_cases("maxpool2d", cases, 3, |r| {
            let (n, c) = (r.random_range(1..3), r.random_range(1..4));
            let (h, w) = (2 * r.random_range(1..4), 2 * r.random_range(1..4));
            let x = separated(r, &[n, c, h, w]);
            let proj = uniform(r, &[n, c, h / 2, w / 2], -1.0, 1.0);
            grad_check(scalar_fn(move |_: &Tape<f64>, x: Var<'_, f64>| project(nn::maxpool2d(x)?, &proj)), &x, EPS)
        }),
        run_cases("batchnorm2d", cases, 4, |r| {
            let (n, c) = (r.random_range(1..3), r.random_range(1..4));
            let (h, w) = (r.random_range(1..4), r.random_range(2..4));
            let mode = if r.random_bool(0.75) { Mode::Train } else { Mode::Eval };
            let x = uniform(r, &[n, c, h, w], -2.0, 2.0);
            let gamma = uniform(r, &[c], 0.5, 1.5);
            let beta = uniform(r, &[c], -0.5, 0.5);
            let rm = uniform(r, &[c], -0.5, 0.5);
            let rv = uniform(r, &[c], 0.5, 1.5);
            let proj = uniform(r, &[n, c, h, w], -1.0, 1.0);
            fn bn<'t>(
                x: Var<'t, f64>,
                g: Var<'t, f64>,
                b: Var<'t, f64>,
                rm: &Tensor<f64>,
                rv: &Tensor<f64>,
                mode: Mode,
            ) -> Result<Var<'t, f64>> {
                nn::batchnorm2d(x, g, b, rm, rv, BatchNormOptions::default(), mode).map(|o| o.output)
            }
            let (g1, b1, m1, v1, p1) = (gamma.clone(), beta.clone(), rm.clone(), rv.clone(), proj.clone());
            let ex = grad_check(
                scalar_fn(move |t: &Tape<f64>, x: Var<'_, f64>| {
                    project(bn(x, t.constant(g1.clone()), t.constant(b1.clone()), &m1, &v1, mode)?, &p1)
                }),
                &x,
                EPS,
            )?;
            let (x2, b2, m2, v2, p2) = (x.clone(), beta.clone(), rm.clone(), rv.clone(), proj.clone());
            let eg = grad_check(
                scalar_fn(move |t: &Tape<f64>, g: Var<'_, f64>| {
                    project(bn(t.constant(x2.clone()), g, t.constant(b2.clone()), &m2, &v2, mode)?, &p2)
                }),
                &gamma,
                EPS,
            )?;
            let eb = grad_check(
                scalar_fn(move |t: &Tape<f64>, b: Var<'_, f64>| {
                    project(bn(t.constant(x.clone()), t.constant(gamma.clone()), b, &rm, &rv, mode)?, &proj)
                }),
                &beta,
                EPS,
            )?;
            Ok(ex.max(eg).max(eb))
        }),
        run_cases("relu", cases, 5, |r| {
            let shape = [r.random_range(1..3), r.random_range(1..3), r.random_range(1..5), r.random_range(1..5)];
            let x = separated(r, &shape);
            let proj = uniform(r, &shape, -1.0, 1.0);
            grad_check(scalar_fn(move |_: &Tape<f64>, x: Var<'_, f64>| project(nn::relu(x)?, &proj)), &x, EPS)
        }),
        run_cases("sigmoid", cases, 6, |r| {
            let shape = [r.random_range(1..3), r.random_range(1..3), r.random_range(1..5), r.random_range(1..5)];
            let x = uniform(r, &shape, -6.0, 6.0);
            let proj = uniform(r, &shape, -1.0, 1.0);
            grad_check(scalar_fn(move |_: &Tape<f64>, x: Var<'_, f64>| project(nn::sigmoid(x)?, &proj)), &x, EPS)
        }),
        run_cases("resize_bilinear", cases, 7, |r| {
            let (n, c) = (r.random_range(1..3), r.random_range(1..3));
            let (h, w) = (r.random_range(1..6), r.random_range(1..6));
            let (oh, ow) = (r.random_range(1..9), r.random_range(1..9));
            let x = uniform(r, &[n, c, h, w], -1.0, 1.0);
            let proj = uniform(r, &[n, c, oh, ow], -1.0, 1.0);
            grad_check(
                scalar_fn(move |_: &Tape<f64>, x: Var<'_, f64>| project(nn::resize_bilinear(x, oh, ow)?, &proj)),
                &x,
                EPS,
            )
        }),
        run_cases("center_crop", cases, 8, |r| {
            let (n, c) = (r.random_range(1..3), r.random_range(1..3));
            let (h, w) = (r.random_range(1..7), r.random_range(1..7));
            let (oh, ow) = (r.random_range(1..=h), r.random_range(1..=w));
            let x = uniform(r, &[n, c, h, w], -1.0, 1.0);
            let proj = uniform(r, &[n, c, oh, ow], -1.0, 1.0);
            grad_check(
                scalar_fn(move |_: &Tape<f64>, x: Var<'_, f64>| project(nn::center_crop(x, oh, ow)?, &proj)),
                &x,
                EPS,
            )
        }),
        run_cases("concat_channels", cases, 9, |r| {
            let (n, ca, cb) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
            let (h, w) = (r.random_range(1..5), r.random_range(1..5));
            let a = uniform(r, &[n, ca, h, w], -1.0, 1.0);
            let b = uniform(r, &[n, cb, h, w], -1.0, 1.0);
            let proj = uniform(r, &[n, ca + cb, h, w], -1.0, 1.0);
            let (b1, p1) = (b.clone(), proj.clone());
            let ea = grad_check(
                scalar_fn(move |t: &Tape<f64>, a: Var<'_, f64>| project(nn::concat_channels(a, t.constant(b1.clone()))?, &p1)),
                &a,
                EPS,
            )?;
            let eb = grad_check(
                scalar_fn(move |t: &Tape<f64>, b: Var<'_, f64>| project(nn::concat_channels(t.constant(a.clone()), b)?, &proj)),
                &b,
                EPS,
            )?;
            Ok(ea.max(eb))
        }),
    ]
}

fn probs(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(r, shape, 0.05, 0.95)
}

fn loss_shape(r: &mut ChaCha8Rng) -> [usize; 4] {
    [r.random_range(1..3), 1, r.random_range(1..5), r.random_range(1..5)]
}

pub fn loss_gradient_reports(cases: usize) -> Vec<GradReport> {
    vec![
        run_cases("bce_loss", cases, 11, |r| {
            let s = loss_shape(r);
            let (p, t) = (probs(r, &s), binary(r, &s));
            grad_check(scalar_fn(move |_: &Tape<f64>, p: Var<'_, f64>| loss::bce_loss(p, &t)), &p, EPS)
        }),
        run_cases("focal_loss", cases, 12, |r| {
            let s = loss_shape(r);
            let (p, t) = (probs(r, &s), binary(r, &s));
            let gamma = r.random_range(0.0..3.0);
            grad_check(scalar_fn(move |_: &Tape<f64>, p: Var<'_, f64>| loss::focal_loss(p, &t, gamma)), &p, EPS)
        }),
        run_cases("dice_score_soft", cases, 13, |r| {
            let s = loss_shape(r);
            let (p, t) = (probs(r, &s), binary(r, &s));
            let smooth = r.random_range(0.1..2.0);
            grad_check(scalar_fn(move |_: &Tape<f64>, p: Var<'_, f64>| loss::dice_score_soft(p, &t, smooth)), &p, EPS)
        }),
        run_cases("mixed_loss", cases, 14, |r| {
            let s = loss_shape(r);
            let (p, t) = (probs(r, &s), binary(r, &s));
            let cfg = LossConfig {
                alpha: r.random_range(0.0..2.0),
                gamma: r.random_range(0.0..2.0),
                smooth: r.random_range(0.1..2.0),
                ..LossConfig::default()
            };
            grad_check(scalar_fn(move |_: &Tape<f64>, p: Var<'_, f64>| loss::mixed_loss(p, &t, &cfg)), &p, EPS)
        }),
        run_cases("ce_loss", cases, 15, |r| {
            let (n, h, w) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..5));
            let logits = uniform(r, &[n, 2, h, w], -4.0, 4.0);
            let t = binary(r, &[n, 1, h, w]);
            grad_check(scalar_fn(move |_: &Tape<f64>, z: Var<'_, f64>| loss::ce_loss(z, &t)), &logits, EPS)
        }),
    ]
}

/// Direct quadruple-loop convolution.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape()[..] else { panic!("4-D input") };
    let [cout, _, k, _] = w.shape()[..] else { panic!("4-D weight") };
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((s * cin + ci) * h + iy as usize) * wd + ix as usize;
                                let wi = ((co * cin + ci) * k + ky) * k + kx;
                                acc += x.data()[xi] * w.data()[wi];
                            }
                        }
                    }
                    out.data_mut()[((s * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Max absolute difference between the library conv and the naive oracle.
pub fn conv_oracle_worst(cases: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let r = &mut rng(seed + i as u64);
        let (n, cin, cout) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
        let k = r.random_range(1..6usize);
        let (stride, pad) = (r.random_range(1..4), r.random_range(0..3));
        let (h, w) = (r.random_range(k.max(1)..k + 12), r.random_range(k.max(1)..k + 12));
        let x = uniform(r, &[n, cin, h, w], -1.0, 1.0);
        let wt = uniform(r, &[cout, cin, k, k], -1.0, 1.0);
        let b = r.random_bool(0.5).then(|| uniform(r, &[cout], -1.0, 1.0));
        let got = nn::conv2d_forward(&x, &nn::Conv2dParams { weight: wt.clone(), bias: b.clone(), stride, padding: pad }).unwrap();
        let want = naive_conv2d(&x, &wt, b.as_ref(), stride, pad);
        assert_eq!(got.shape(), want.shape(), "case {i}");
        let d = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
    }
    worst
}

/// Worst `|<Ax, y> - <x, A^T y>| / (|x| |A^T y| + |Ax| |y|)` between a
/// stride-k convolution and the transposed convolution sharing its weight.
pub fn adjoint_worst(cases: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let r = &mut rng(seed + i as u64);
        let (n, cin, cout) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..5));
        let k = r.random_range(1..4usize);
        let (h, w) = (k * r.random_range(1..5), k * r.random_range(1..5));
        let x = uniform(r, &[n, cin, h, w], -1.0, 1.0);
        let wt = uniform(r, &[cout, cin, k, k], -1.0, 1.0);
        let y = uniform(r, &[n, cout, h / k, w / k], -1.0, 1.0);
        let ax = nn::conv2d_forward(&x, &nn::Conv2dParams { weight: wt.clone(), bias: None, stride: k, padding: 0 }).unwrap();
        let aty = nn::conv_transpose2d_forward(&y, &wt, k).unwrap();
        let lhs = ax.dot(&y).unwrap();
        let rhs = x.dot(&aty).unwrap();
        let norm = |t: &Tensor<f64>| t.dot(t).unwrap().sqrt();
        let scale = norm(&x) * norm(&aty) + norm(&ax) * norm(&y);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    worst
}

/// Exhaustive Dice check over every pair of 8-pixel masks.
///
/// Returns the number of pairs where the library disagrees with pixel
/// counting, and whether the two variants relate as counting predicts:
/// `|A∪B| <= |A|+|B|` makes the union form never smaller, equal exactly
/// when the intersection is empty, and twice the standard form when A = B.
pub fn dice_exhaustive() -> (usize, bool) {
    let bits = |m: u32| -> Vec<f64> { (0..8).map(|i| ((m >> i) & 1) as f64).collect() };
    let mut mismatches = 0;
    let mut relation_ok = true;
    for a in 0..256u32 {
        for b in 0..256u32 {
            let inter = (a & b).count_ones() as f64;
            let union = (a | b).count_ones() as f64;
            let sizes = (a.count_ones() + b.count_ones()) as f64;
            let (want_std, want_lit) = if sizes == 0.0 {
                (1.0, 1.0)
            } else {
                (2.0 * inter / sizes, 2.0 * inter / union)
            };
            let s = loss::dice_coefficient(&bits(a), &bits(b), DiceMode::Standard).unwrap();
            let l = loss::dice_coefficient(&bits(a), &bits(b), DiceMode::PaperLiteral).unwrap();
            if s != want_std || l != want_lit {
                mismatches += 1;
            }
            let equal_expected = a & b == 0;
            relation_ok &= l >= s && (l == s) == equal_expected;
            if a == b && a != 0 {
                relation_ok &= s == 1.0 && l == 2.0;
            }
        }
    }
    (mismatches, relation_ok)
}
