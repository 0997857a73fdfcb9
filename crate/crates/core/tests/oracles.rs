mod common;

use unetseg::loss::{focal_loss, bce_loss, ce_loss, dice_coefficient, dice_score_soft, mixed_loss, DiceMode, LossConfig};
use unetseg::nn::sigmoid_scalar;
use unetseg::{Tape, Tensor};

#[test]
fn conv2d_matches_naive_loops() {
    let worst = common::conv_oracle_worst(50, 100);
    assert!(worst <= 1e-5, "max abs difference {worst:e}");
}

#[test]
fn conv_transpose_is_the_adjoint() {
    let worst = common::adjoint_worst(50, 200);
    assert!(worst <= 1e-6, "relative adjoint gap {worst:e}");
}

#[test]
fn dice_matches_pixel_counting_on_all_pairs() {
    let (mismatches, relation) = common::dice_exhaustive();
    assert_eq!(mismatches, 0);
    assert!(relation);
}

#[test]
fn dice_examples() {
    let a = [1.0, 1.0, 0.0, 0.0];
    let b = [1.0, 0.0, 1.0, 0.0];
    assert_eq!(dice_coefficient(&a, &b, DiceMode::Standard).unwrap(), 0.5);
    assert!((dice_coefficient(&a, &b, DiceMode::PaperLiteral).unwrap() - 2.0 / 3.0).abs() < 1e-15);
}

fn scalar(f: impl Fn(&Tape<f64>) -> f64) -> f64 {
    f(&Tape::new())
}

#[test]
fn focal_scalar_oracle() {
    // -(1 - 0.3)^0.9 * ln(0.3)
    let want = -(0.7f64).powf(0.9) * 0.3f64.ln();
    assert!((want - 0.873_383_359_485_087_3).abs() < 1e-15);
    let got = scalar(|t| {
        let p = t.constant(Tensor::scalar(0.3));
        focal_loss(p, &Tensor::scalar(1.0), 0.9).unwrap().value().item().unwrap()
    });
    assert!((got - want).abs() < 1e-12, "{got}");
}

#[test]
fn bce_matches_direct_formula() {
    let mut r = common::rng(3);
    let p = common::uniform(&mut r, &[2, 1, 5, 7], 0.01, 0.99);
    let y = common::binary(&mut r, &[2, 1, 5, 7]);
    let want: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum::<f64>()
        / 70.0;
    let got = scalar(|t| bce_loss(t.constant(p.clone()), &y).unwrap().value().item().unwrap());
    assert!((got - want).abs() < 1e-6);
}

#[test]
fn mixed_loss_on_four_pixels_composes_oracles() {
    let p = [0.9, 0.2, 0.6, 0.1];
    let y = [1.0, 0.0, 1.0, 1.0];
    let focal: f64 = p
        .iter()
        .zip(&y)
        .map(|(&p, &t)| {
            let pt: f64 = if t == 1.0 { p } else { 1.0 - p };
            -(1.0 - pt).powf(0.9) * pt.ln()
        })
        .sum::<f64>()
        / 4.0;
    let inter: f64 = p.iter().zip(&y).map(|(a, b)| a * b).sum();
    let dice = (2.0 * inter + 1.0) / (p.iter().sum::<f64>() + y.iter().sum::<f64>() + 1.0);
    let want = focal - dice.ln();
    let pt = Tensor::new([1, 1, 2, 2], p.to_vec()).unwrap();
    let yt = Tensor::new([1, 1, 2, 2], y.to_vec()).unwrap();
    let got = scalar(|t| {
        mixed_loss(t.constant(pt.clone()), &yt, &LossConfig::default())
            .unwrap()
            .value()
            .item()
            .unwrap()
    });
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    let soft = scalar(|t| dice_score_soft(t.constant(pt.clone()), &yt, 1.0).unwrap().value().item().unwrap());
    assert!((soft - dice).abs() < 1e-12);
}

#[test]
fn soft_dice_empty_prediction() {
    let n = 9;
    let got = scalar(|t| {
        dice_score_soft(t.constant(Tensor::zeros([1, 1, 3, 3])), &Tensor::ones([1, 1, 3, 3]), 1.0)
            .unwrap()
            .value()
            .item()
            .unwrap()
    });
    // the clamp keeps predictions at 1e-7, a 1e-7-level shift from 1/(n+1)
    assert!((got - 1.0 / (n as f64 + 1.0)).abs() < 1e-6);
}

#[test]
fn ce_large_margin_matches_log1p() {
    // -log softmax with a +40 margin = ln(1 + e^-40)
    let want = (-40.0f64).exp().ln_1p();
    assert!((want - 4.248_354_255_291_589e-18).abs() < 1e-30);
    let logits = Tensor::new([1, 2, 1, 1], vec![0.0, 40.0]).unwrap();
    let got = scalar(|t| ce_loss(t.constant(logits.clone()), &Tensor::ones([1, 1, 1, 1])).unwrap().value().item().unwrap());
    assert!(got.is_finite() && (got - want).abs() < 1e-20, "{got}");
    // the sigmoid is held strictly below 1 so log(1 - p) stays finite
    let s = sigmoid_scalar(40.0f64);
    assert!(s < 1.0 && 1.0 - s <= f64::EPSILON);
}
