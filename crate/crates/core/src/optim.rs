//! Adam and the stepped learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

pub const ADAM_M_SUFFIX: &str = ".adam_m";
pub const ADAM_V_SUFFIX: &str = ".adam_v";

pub fn is_optimizer_tensor(name: &str) -> bool {
    name.ends_with(ADAM_M_SUFFIX) || name.ends_with(ADAM_V_SUFFIX)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F: Real> {
    pub config: AdamConfig,
    pub m: BTreeMap<String, Tensor<F>>,
    pub v: BTreeMap<String, Tensor<F>>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    /// Moments as checkpoint tensors (`<param>.adam_m`, `<param>.adam_v`).
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor<F>> {
        let m = self.m.iter().map(|(k, t)| (format!("{k}{ADAM_M_SUFFIX}"), t.clone()));
        let v = self.v.iter().map(|(k, t)| (format!("{k}{ADAM_V_SUFFIX}"), t.clone()));
        m.chain(v).collect()
    }

    pub fn from_tensors(config: AdamConfig, t: u64, tensors: &BTreeMap<String, Tensor<F>>) -> Self {
        let mut state = Self::new(config);
        state.t = t;
        for (name, tensor) in tensors {
            if let Some(p) = name.strip_suffix(ADAM_M_SUFFIX) {
                state.m.insert(p.to_string(), tensor.clone());
            } else if let Some(p) = name.strip_suffix(ADAM_V_SUFFIX) {
                state.v.insert(p.to_string(), tensor.clone());
            }
        }
        state
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
///
/// All gradients are validated before anything is modified; `t` advances by
/// exactly one per call.
pub fn adam_step<F: Real>(
    params: &mut BTreeMap<String, Tensor<F>>,
    grads: &BTreeMap<String, Tensor<F>>,
    state: &mut AdamState<F>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("gradient for unknown parameter {name:?}")))?;
        p.expect_same_shape(g)
            .map_err(|e| Error::ShapeMismatch(format!("{name}: {e}")))?;
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    let cfg = state.config;
    let t = state.t as i32;
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let corr1 = F::of(1.0 - cfg.beta1.powi(t));
    let corr2 = F::of(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (F::of(lr), F::of(cfg.eps));

    let mut work: Vec<(&mut Tensor<F>, &Tensor<F>, &mut Tensor<F>, &mut Tensor<F>)> = Vec::new();
    for name in grads.keys() {
        let shape = grads[name].shape().to_vec();
        state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape.clone()));
        state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape));
    }
    let mut ms: BTreeMap<&String, &mut Tensor<F>> =
        state.m.iter_mut().filter(|(k, _)| grads.contains_key(*k)).collect();
    let mut vs: BTreeMap<&String, &mut Tensor<F>> =
        state.v.iter_mut().filter(|(k, _)| grads.contains_key(*k)).collect();
    for (name, p) in params.iter_mut() {
        if let Some(g) = grads.get(name) {
            let m = ms.remove(name).expect("moment initialized");
            let v = vs.remove(name).expect("moment initialized");
            work.push((p, g, m, v));
        }
    }
    par::for_each_mut(&mut work, |(p, g, m, v)| {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (F::one() - b1) * gi;
            v[i] = b2 * v[i] + (F::one() - b2) * gi * gi;
            let mhat = m[i] / corr1;
            let vhat = v[i] / corr2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    });
    Ok(())
}

/// Learning rate held constant within an epoch and multiplied by `factor`
/// at `floor(total / 2)` and again at `floor(3 * total / 4)`.
///
/// Rates are kept in `f32`, the training precision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f32,
    pub factor: f32,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f32, factor: f32, total_epochs: usize) -> Self {
        Self {
            base_lr,
            factor,
            total_epochs,
        }
    }

    pub fn milestones(&self) -> (usize, usize) {
        (self.total_epochs / 2, 3 * self.total_epochs / 4)
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f32> {
        if epoch >= self.total_epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        let (mid, three_q) = self.milestones();
        let mut lr = self.base_lr;
        if epoch >= mid {
            lr *= self.factor;
        }
        if epoch >= three_q {
            lr *= self.factor;
        }
        Ok(lr)
    }
}
