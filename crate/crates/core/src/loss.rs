//! Segmentation losses and the binary Dice coefficient.
//!
//! Probability-space losses clamp predictions to `[1e-7, 1 - 1e-7]` before
//! taking logs; gradients are zero where the clamp is active.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Ce,
    Focal,
    Dice,
    Mixed,
}

/// Loss family and its coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the focal term in the mixed loss.
    pub alpha: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Additive smoothing of the soft Dice score.
    pub smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Mixed,
            alpha: 1.0,
            gamma: 0.9,
            smooth: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::NegativeGamma(self.gamma));
        }
        if !(self.alpha >= 0.0) || !(self.smooth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss needs alpha >= 0 and smooth > 0, got alpha={} smooth={}",
                self.alpha, self.smooth
            )));
        }
        Ok(())
    }

    /// Evaluates the configured loss on sigmoid probabilities.
    ///
    /// `Ce` lifts the probabilities to two-class logits `(0, logit(p))`, for
    /// which the softmax reproduces `p`.
    pub fn apply<'t, F: Real>(&self, pred: Var<'t, F>, target: &Tensor<F>) -> Result<Var<'t, F>> {
        self.validate()?;
        match self.kind {
            LossKind::Bce => bce_loss(pred, target),
            LossKind::Ce => ce_loss(two_class_logits(pred)?, target),
            LossKind::Focal => focal_loss(pred, target, self.gamma),
            LossKind::Dice => {
                let one = pred.tape().constant(Tensor::scalar(F::one()));
                one.sub(dice_score_soft(pred, target, self.smooth)?)
            }
            LossKind::Mixed => mixed_loss(pred, target, self),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceMode {
    /// `2|A∩B| / (|A| + |B|)`
    #[default]
    Standard,
    /// `2|A∩B| / |A∪B|`, the union-denominator form.
    PaperLiteral,
}

impl std::str::FromStr for DiceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "paper-literal" | "paper_literal" => Ok(Self::PaperLiteral),
            other => Err(Error::InvalidConfig(format!("unknown dice mode {other:?}"))),
        }
    }
}

fn clamp_prob<F: Real>(p: F) -> (F, bool) {
    let lo = F::of(PROB_EPS);
    let hi = F::one() - lo;
    if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    }
}

fn check_pair<F: Real>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<()> {
    pred.expect_same_shape(target)?;
    if pred.numel() == 0 {
        return Err(Error::EmptyTensor);
    }
    Ok(())
}

/// Records a loss given per-element values and derivatives w.r.t. `pred`.
fn elementwise_mean<'t, F: Real>(
    name: &'static str,
    pred: Var<'t, F>,
    target: &Tensor<F>,
    f: impl Fn(F, F) -> (F, F),
) -> Result<Var<'t, F>> {
    let pv = pred.value();
    check_pair(&pv, target)?;
    let n = F::of(pv.numel() as f64);
    let mut total = F::zero();
    let mut dpred = Vec::with_capacity(pv.numel());
    for (&p, &t) in pv.data().iter().zip(target.data()) {
        let (p, live) = clamp_prob(p);
        let (l, d) = f(p, t);
        total += l;
        dpred.push(if live { d / n } else { F::zero() });
    }
    let dpred = Tensor::new(pv.shape().to_vec(), dpred)?;
    pred.tape().op(
        name,
        &[pred],
        Tensor::scalar(total / n),
        Box::new(move |ctx| {
            let g = ctx.grad.data()[0];
            vec![Some(dpred.map(|d| d * g))]
        }),
    )
}

/// Mean of `-[t ln p + (1 - t) ln(1 - p)]`.
pub fn bce_loss<'t, F: Real>(pred: Var<'t, F>, target: &Tensor<F>) -> Result<Var<'t, F>> {
    elementwise_mean("bce", pred, target, |p, t| {
        let one = F::one();
        let l = -(t * p.ln() + (one - t) * (one - p).ln());
        let d = -(t / p - (one - t) / (one - p));
        (l, d)
    })
}

/// Mean of `-(1 - p_t)^gamma ln(p_t)`, written for soft targets as
/// `-t (1-p)^g ln p - (1-t) p^g ln(1-p)`. With `gamma = 0` this evaluates the
/// same expression as [`bce_loss`].
pub fn focal_loss<'t, F: Real>(pred: Var<'t, F>, target: &Tensor<F>, gamma: f64) -> Result<Var<'t, F>> {
    if !(gamma >= 0.0) {
        return Err(Error::NegativeGamma(gamma));
    }
    let g = F::of(gamma);
    elementwise_mean("focal", pred, target, move |p, t| {
        let one = F::one();
        let q = one - p;
        let (wp, wq) = (q.powf(g), p.powf(g));
        let (lp, lq) = (p.ln(), q.ln());
        let l = -(t * wp * lp + (one - t) * wq * lq);
        let mut d = -(t * wp / p) + (one - t) * wq / q;
        if gamma != 0.0 {
            d += t * g * q.powf(g - one) * lp - (one - t) * g * p.powf(g - one) * lq;
        }
        (l, d)
    })
}

/// Soft Dice score `(2 Σ p t + smooth) / (Σ p + Σ t + smooth)` over the whole tensor.
pub fn dice_score_soft<'t, F: Real>(pred: Var<'t, F>, target: &Tensor<F>, smooth: f64) -> Result<Var<'t, F>> {
    let pv = pred.value();
    check_pair(&pv, target)?;
    let s = F::of(smooth);
    let inter: F = pv.dot(target)?;
    let num = F::of(2.0) * inter + s;
    let den = pv.sum() + target.sum() + s;
    let target = target.clone();
    pred.tape().op(
        "dice_soft",
        &[pred],
        Tensor::scalar(num / den),
        Box::new(move |ctx| {
            let g = ctx.grad.data()[0];
            let two = F::of(2.0);
            vec![Some(target.map(|t| g * (two * t * den - num) / (den * den)))]
        }),
    )
}

/// `alpha * focal - ln(soft dice)`.
pub fn mixed_loss<'t, F: Real>(pred: Var<'t, F>, target: &Tensor<F>, cfg: &LossConfig) -> Result<Var<'t, F>> {
    let focal = focal_loss(pred, target, cfg.gamma)?.scale(F::of(cfg.alpha))?;
    let dice = dice_score_soft(pred, target, cfg.smooth)?;
    focal.sub(dice.ln()?)
}

/// Two-class softmax cross-entropy over `[N, 2, H, W]` logits.
///
/// `target` holds class indices {0, 1} shaped `[N, 1, H, W]` or `[N, H, W]`.
pub fn ce_loss<'t, F: Real>(logits: Var<'t, F>, target: &Tensor<F>) -> Result<Var<'t, F>> {
    let zv = logits.value();
    let (n, c, h, w) = zv.dims4()?;
    let plane = h * w;
    if c != 2 || target.numel() != n * plane {
        return Err(Error::ShapeMismatch(format!(
            "ce_loss logits {:?} with target {:?}",
            zv.shape(),
            target.shape()
        )));
    }
    let count = F::of((n * plane) as f64);
    let mut total = F::zero();
    let mut dz = vec![F::zero(); zv.numel()];
    for s in 0..n {
        for i in 0..plane {
            let (i0, i1) = (s * 2 * plane + i, (s * 2 + 1) * plane + i);
            let (z0, z1) = (zv.data()[i0], zv.data()[i1]);
            let t = target.data()[s * plane + i];
            let cls1 = t > F::of(0.5);
            let (zt, zo) = if cls1 { (z1, z0) } else { (z0, z1) };
            let m = z0.max(z1);
            // -log softmax_t = (m - z_t) + ln(1 + exp(-|z0 - z1|))
            total += (m - zt) + (-(z0 - z1).abs()).exp().ln_1p();
            // softmax of the other class
            let so = if zo > zt {
                F::one() / (F::one() + (zt - zo).exp())
            } else {
                let e = (zo - zt).exp();
                e / (F::one() + e)
            };
            let (dt, d_other) = (-so / count, so / count);
            if cls1 {
                dz[i1] = dt;
                dz[i0] = d_other;
            } else {
                dz[i0] = dt;
                dz[i1] = d_other;
            }
        }
    }
    let dz = Tensor::new(zv.shape().to_vec(), dz)?;
    logits.tape().op(
        "ce",
        &[logits],
        Tensor::scalar(total / count),
        Box::new(move |ctx| {
            let g = ctx.grad.data()[0];
            vec![Some(dz.map(|d| d * g))]
        }),
    )
}

/// Lifts `[N, 1, H, W]` probabilities to logits `(0, ln p - ln(1 - p))`.
fn two_class_logits<'t, F: Real>(pred: Var<'t, F>) -> Result<Var<'t, F>> {
    let pv = pred.value();
    let (n, c, h, w) = pv.dims4()?;
    if c != 1 {
        return Err(Error::ShapeMismatch(format!(
            "two-class lift expects one probability channel, got {c}"
        )));
    }
    let plane = h * w;
    let mut out = vec![F::zero(); n * 2 * plane];
    for s in 0..n {
        for i in 0..plane {
            let (p, _) = clamp_prob(pv.data()[s * plane + i]);
            out[(s * 2 + 1) * plane + i] = p.ln() - (F::one() - p).ln();
        }
    }
    pred.tape().op(
        "two_class_logits",
        &[pred],
        Tensor::new([n, 2, h, w], out)?,
        Box::new(move |ctx| {
            let p = ctx.inputs[0];
            let mut d = vec![F::zero(); p.numel()];
            for s in 0..n {
                for i in 0..plane {
                    let (pc, live) = clamp_prob(p.data()[s * plane + i]);
                    if live {
                        d[s * plane + i] =
                            ctx.grad.data()[(s * 2 + 1) * plane + i] / (pc * (F::one() - pc));
                    }
                }
            }
            vec![Some(Tensor::new(p.shape().to_vec(), d).expect("shape"))]
        }),
    )
}

/// Dice coefficient of two binary masks; two empty masks score 1.
pub fn dice_coefficient<F: Real>(a: &[F], b: &[F], mode: DiceMode) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "dice over {} vs {} pixels",
            a.len(),
            b.len()
        )));
    }
    let (mut inter, mut na, mut nb, mut union) = (0u64, 0u64, 0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        let x = binary(x)?;
        let y = binary(y)?;
        inter += (x & y) as u64;
        union += (x | y) as u64;
        na += x as u64;
        nb += y as u64;
    }
    let den = match mode {
        DiceMode::Standard => na + nb,
        DiceMode::PaperLiteral => union,
    };
    if den == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / den as f64)
}

fn binary<F: Real>(v: F) -> Result<bool> {
    if v == F::zero() {
        Ok(false)
    } else if v == F::one() {
        Ok(true)
    } else {
        Err(Error::NonBinaryMask(v.as_f64()))
    }
}

/// Maps probabilities to {0, 1} with `p > threshold`.
pub fn binarize<F: Real>(probs: &[F], threshold: f64) -> Vec<F> {
    let t = F::of(threshold);
    probs
        .iter()
        .map(|&p| if p > t { F::one() } else { F::zero() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64([v.len()], v).unwrap()
    }

    fn scalar<'t>(v: Var<'t, f64>) -> f64 {
        v.value().item().unwrap()
    }

    #[test]
    fn bce_perfect_and_uniform() {
        let tape = Tape::new();
        let target = t(&[1.0, 0.0, 1.0, 0.0]);
        let l = bce_loss(tape.constant(target.clone()), &target).unwrap();
        assert!(scalar(l) <= 1e-6);
        let l = bce_loss(tape.constant(Tensor::full([4], 0.5)), &target).unwrap();
        assert!((scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn focal_scalar_value() {
        // -(0.7)^0.9 ln(0.3)
        let tape = Tape::new();
        let l = focal_loss(tape.constant(t(&[0.3])), &t(&[1.0]), 0.9).unwrap();
        assert!((scalar(l) - 0.873_383_359_485_087_3).abs() < 1e-12);
    }

    #[test]
    fn focal_downweights_easy_examples() {
        let tape = Tape::new();
        let easy = focal_loss(tape.constant(t(&[0.999])), &t(&[1.0]), 2.0).unwrap();
        let bce = bce_loss(tape.constant(t(&[0.999])), &t(&[1.0])).unwrap();
        assert!(scalar(easy) < 1e-5 * scalar(bce));
        assert!(matches!(
            focal_loss(tape.constant(t(&[0.5])), &t(&[1.0]), -1.0),
            Err(Error::NegativeGamma(_))
        ));
    }

    #[test]
    fn soft_dice_cases() {
        let tape = Tape::new();
        let target = t(&[1.0, 0.0, 1.0, 1.0]);
        let d = dice_score_soft(tape.constant(target.clone()), &target, 1.0).unwrap();
        assert_eq!(scalar(d), 1.0);
        let ones = Tensor::ones([5]);
        let d = dice_score_soft(tape.constant(Tensor::zeros([5])), &ones, 1.0).unwrap();
        assert!((scalar(d) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn mixed_loss_degenerate_alpha_is_neg_log_dice() {
        let tape = Tape::new();
        let pred = tape.constant(t(&[0.2, 0.9, 0.6, 0.1]));
        let target = t(&[0.0, 1.0, 1.0, 0.0]);
        let cfg = LossConfig {
            alpha: 0.0,
            ..LossConfig::default()
        };
        let m = scalar(mixed_loss(pred, &target, &cfg).unwrap());
        let d = scalar(dice_score_soft(pred, &target, 1.0).unwrap());
        assert!((m + d.ln()).abs() < 1e-15);
    }

    #[test]
    fn ce_uniform_and_saturated() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::<f64>::zeros([1, 2, 1, 2]));
        let target = Tensor::from_f64([1, 1, 1, 2], &[0.0, 1.0]).unwrap();
        assert!((scalar(ce_loss(z, &target).unwrap()) - std::f64::consts::LN_2).abs() < 1e-15);

        // margin 40 toward the target; reference ln(1 + e^-40) = 4.2483542552915890e-18
        let z = tape.constant(Tensor::from_f64([1, 2, 1, 1], &[0.0, 40.0]).unwrap());
        let l = scalar(ce_loss(z, &Tensor::ones([1, 1, 1, 1])).unwrap());
        assert!((l - 4.248_354_255_291_589e-18).abs() < 1e-30);
        let z = tape.constant(Tensor::from_f64([1, 2, 1, 1], &[0.0, -1000.0]).unwrap());
        assert!((scalar(ce_loss(z, &Tensor::ones([1, 1, 1, 1])).unwrap()) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn ce_on_lifted_probabilities_equals_bce() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::<f64>::from_f64([1, 1, 2, 2], &[0.1, 0.7, 0.55, 0.95]).unwrap());
        let target = Tensor::from_f64([1, 1, 2, 2], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        let ce = LossConfig {
            kind: LossKind::Ce,
            ..LossConfig::default()
        };
        let a = scalar(ce.apply(p, &target).unwrap());
        let b = scalar(bce_loss(p, &target).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn dice_coefficient_hand_cases() {
        let a = [1.0, 1.0, 0.0, 0.0];
        let b = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(dice_coefficient(&a, &b, DiceMode::Standard).unwrap(), 0.5);
        assert!((dice_coefficient(&a, &b, DiceMode::PaperLiteral).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice_coefficient(&a, &a, DiceMode::Standard).unwrap(), 1.0);
        let c = [0.0, 0.0, 1.0, 1.0];
        for mode in [DiceMode::Standard, DiceMode::PaperLiteral] {
            assert_eq!(dice_coefficient(&a, &c, mode).unwrap(), 0.0);
            assert_eq!(dice_coefficient(&[0.0f64; 4], &[0.0; 4], mode).unwrap(), 1.0);
        }
        assert!(matches!(
            dice_coefficient(&[0.5f64], &[1.0], DiceMode::Standard),
            Err(Error::NonBinaryMask(_))
        ));
        assert!(matches!(
            dice_coefficient(&[1.0f64], &[1.0, 0.0], DiceMode::Standard),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn dice_mode_parses_cli_spelling() {
        assert_eq!("paper-literal".parse::<DiceMode>().unwrap(), DiceMode::PaperLiteral);
        assert_eq!("standard".parse::<DiceMode>().unwrap(), DiceMode::Standard);
        assert!("union".parse::<DiceMode>().is_err());
    }
}
