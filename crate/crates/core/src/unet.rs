//! UNet with a runtime-configurable depth.
//!
//! Encoder level `i` (for `i < depth`) runs two `conv3x3 -> batchnorm -> relu`
//! stages at `base * 2^i` channels, keeps its output as the skip tensor and
//! max-pools. Level `depth` is the bottleneck. Each decoder level upsamples
//! with a 2x2 stride-2 transposed convolution, brings the matching skip
//! tensor to the upsampled spatial size (bilinear resize by default, center
//! crop as the alternative), concatenates `[skip, upsampled]` and runs
//! another double conv. A 1x1 convolution and a sigmoid produce the
//! foreground probability.
//!
//! Parameter names:
//!
//! | name | shape |
//! |---|---|
//! | `enc{i}.conv{1,2}.weight`, `i = 0..=depth` | `[c_i, c_in, 3, 3]` |
//! | `enc{i}.bn{1,2}.{gamma,beta,running_mean,running_var}` | `[c_i]` |
//! | `up{i}.deconv.weight`, `i < depth` | `[c_{i+1}, c_i, 2, 2]` |
//! | `dec{i}.conv1.weight` | `[c_i, 2 c_i, 3, 3]` |
//! | `dec{i}.conv2.weight` | `[c_i, c_i, 3, 3]` |
//! | `dec{i}.bn{1,2}.*` | `[c_i]` |
//! | `head.weight`, `head.bias` | `[1, base, 1, 1]`, `[1]` |
//!
//! with `c_i = base * 2^i`. Convolutions followed by batch norm carry no
//! bias: the normalization subtracts any per-channel constant.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tape, Var};
use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::{self, BatchNormOptions, Mode};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    #[default]
    Resize,
    CenterCrop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub skip_mode: SkipMode,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_channels: 64,
            depth: 4,
            skip_mode: SkipMode::Resize,
            out_channels: 1,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_channels < 1 || self.in_channels < 1 {
            return Err(Error::InvalidConfig(format!(
                "depth, base_channels and in_channels must be >= 1 (got {}, {}, {})",
                self.depth, self.base_channels, self.in_channels
            )));
        }
        if self.out_channels != 1 {
            return Err(Error::InvalidConfig(format!(
                "only a single-channel binary head is supported, got out_channels={}",
                self.out_channels
            )));
        }
        if self.depth > 24 {
            return Err(Error::InvalidConfig(format!("depth {} is unreasonably deep", self.depth)));
        }
        Ok(())
    }

    /// Channels at encoder level `level`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Every parameter name and shape, in creation order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.specs().into_iter().map(|s| (s.name, s.shape)).collect()
    }

    fn specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let block = |prefix: String, cin: usize, c: usize, out: &mut Vec<ParamSpec>| {
            for (j, inc) in [(1, cin), (2, c)] {
                out.push(ParamSpec::he(format!("{prefix}.conv{j}.weight"), vec![c, inc, 3, 3], inc * 9));
                for (stat, init) in [
                    ("gamma", Init::One),
                    ("beta", Init::Zero),
                    ("running_mean", Init::Zero),
                    ("running_var", Init::One),
                ] {
                    out.push(ParamSpec {
                        name: format!("{prefix}.bn{j}.{stat}"),
                        shape: vec![c],
                        init,
                        learnable: !stat.starts_with("running"),
                    });
                }
            }
        };
        for i in 0..=self.depth {
            let cin = if i == 0 { self.in_channels } else { self.channels(i - 1) };
            block(format!("enc{i}"), cin, self.channels(i), &mut out);
        }
        for i in (0..self.depth).rev() {
            let (cu, c) = (self.channels(i + 1), self.channels(i));
            // each output pixel receives one tap per input channel
            out.push(ParamSpec::he(format!("up{i}.deconv.weight"), vec![cu, c, 2, 2], cu));
            block(format!("dec{i}"), 2 * c, c, &mut out);
        }
        let base = self.base_channels;
        out.push(ParamSpec::he("head.weight".into(), vec![self.out_channels, base, 1, 1], base));
        out.push(ParamSpec {
            name: "head.bias".into(),
            shape: vec![self.out_channels],
            init: Init::Zero,
            learnable: true,
        });
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    He { fan_in: usize },
    Zero,
    One,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
    learnable: bool,
}

impl ParamSpec {
    fn he(name: String, shape: Vec<usize>, fan_in: usize) -> Self {
        Self {
            name,
            shape,
            init: Init::He { fan_in },
            learnable: true,
        }
    }
}

/// Largest depth whose repeated 2x2 pooling keeps both sides integral.
pub fn max_depth(h: usize, w: usize) -> usize {
    if h == 0 || w == 0 {
        return 0;
    }
    h.trailing_zeros().min(w.trailing_zeros()) as usize
}

/// Checks that `depth` pooling steps fit an `h x w` input.
///
/// Accepts iff `2^depth <= min(h, w)` and both sides are divisible by
/// `2^depth`, i.e. depth never exceeds `log2 min(h, w)` and every pooling
/// step sees even dims.
pub fn validate_depth(h: usize, w: usize, depth: usize) -> Result<()> {
    let max = max_depth(h, w);
    if h == 0 || w == 0 || depth > max {
        return Err(Error::DepthTooDeep { h, w, depth, max });
    }
    Ok(())
}

/// Draws `count` values from `N(0, 2 / fan_in)`.
pub fn he_normal<F: Real>(count: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..count).map(|_| F::of(normal.sample(rng))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetModel<F: Real = f32> {
    config: UNetConfig,
    params: BTreeMap<String, Tensor<F>>,
    bn: BatchNormOptions,
}

/// Result of one forward pass.
pub struct ForwardPass<'t, F: Real> {
    /// Foreground probabilities, `[N, 1, H, W]`.
    pub output: Var<'t, F>,
    /// Learnable parameters as recorded on the tape.
    pub params: Vec<(String, Var<'t, F>)>,
}

impl<F: Real> ForwardPass<'_, F> {
    /// Collects parameter gradients by name.
    pub fn named_grads(&self, grads: &mut Gradients<F>) -> BTreeMap<String, Tensor<F>> {
        self.params
            .iter()
            .filter_map(|(name, v)| grads.take(*v).map(|g| (name.clone(), g)))
            .collect()
    }
}

struct Recorder<'t, 'm, F: Real> {
    tape: &'t Tape<F>,
    model: &'m UNetModel<F>,
    mode: Mode,
    params: Vec<(String, Var<'t, F>)>,
    running: Vec<(String, Tensor<F>)>,
}

impl<'t, F: Real> Recorder<'t, '_, F> {
    fn param(&mut self, name: String) -> Result<Var<'t, F>> {
        let t = self.model.tensor(&name)?.clone();
        let v = self.tape.param(t);
        self.params.push((name, v));
        Ok(v)
    }

    fn double_conv(&mut self, prefix: &str, mut x: Var<'t, F>) -> Result<Var<'t, F>> {
        for j in 1..=2 {
            let w = self.param(format!("{prefix}.conv{j}.weight"))?;
            x = nn::conv2d(x, w, None, 1, 1)?;
            let gamma = self.param(format!("{prefix}.bn{j}.gamma"))?;
            let beta = self.param(format!("{prefix}.bn{j}.beta"))?;
            let rm_name = format!("{prefix}.bn{j}.running_mean");
            let rv_name = format!("{prefix}.bn{j}.running_var");
            let bn = nn::batchnorm2d(
                x,
                gamma,
                beta,
                self.model.tensor(&rm_name)?,
                self.model.tensor(&rv_name)?,
                self.model.bn,
                self.mode,
            )?;
            if let Some((rm, rv)) = bn.running {
                self.running.push((rm_name, rm));
                self.running.push((rv_name, rv));
            }
            x = nn::relu(bn.output)?;
        }
        Ok(x)
    }
}

impl<F: Real> UNetModel<F> {
    /// Builds a model with He-normal conv weights drawn from a seeded stream,
    /// zero biases and identity batch norms.
    pub fn build(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .specs()
            .into_iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::He { fan_in } => he_normal(n, fan_in, &mut rng),
                    Init::Zero => vec![F::zero(); n],
                    Init::One => vec![F::one(); n],
                };
                (s.name, Tensor::new(s.shape, data).expect("spec shape"))
            })
            .collect();
        Ok(Self {
            config,
            params,
            bn: BatchNormOptions::default(),
        })
    }

    /// Assembles a model from named tensors, checking names and shapes against `config`.
    pub fn from_tensors(config: UNetConfig, tensors: &BTreeMap<String, Tensor<F>>) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        for (name, shape) in config.parameter_shapes() {
            let t = tensors.get(&name).ok_or_else(|| {
                Error::ShapeMismatch(format!("tensor {name:?} missing (expected shape {shape:?})"))
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {name:?} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            params.insert(name, t.clone());
        }
        if let Some(extra) = tensors
            .keys()
            .find(|k| !params.contains_key(*k) && !crate::optim::is_optimizer_tensor(k))
        {
            return Err(Error::ShapeMismatch(format!(
                "unexpected tensor {extra:?} for this configuration"
            )));
        }
        Ok(Self {
            config,
            params,
            bn: BatchNormOptions::default(),
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<F>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<F>> {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<F>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("model has no tensor {name:?}")))
    }

    /// Names of the parameters an optimizer updates (excludes running statistics).
    pub fn learnable_names(&self) -> Vec<String> {
        self.config
            .specs()
            .into_iter()
            .filter(|s| s.learnable)
            .map(|s| s.name)
            .collect()
    }

    pub fn num_learnable(&self) -> usize {
        self.learnable_names()
            .iter()
            .map(|n| self.params[n].numel())
            .sum()
    }

    /// Runs the network on `input` (`[N, in_channels, H, W]`).
    ///
    /// In train mode batch statistics are used and the running statistics
    /// are updated in place.
    pub fn forward<'t>(
        &mut self,
        tape: &'t Tape<F>,
        input: Var<'t, F>,
        mode: Mode,
    ) -> Result<ForwardPass<'t, F>> {
        let (pass, running) = self.run(tape, input, mode, None)?;
        for (name, t) in running {
            self.params.insert(name, t);
        }
        Ok(pass)
    }

    /// Eval-mode probabilities for a batch.
    pub fn predict(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        let tape = Tape::new();
        let x = tape.constant(input.clone());
        let (pass, _) = self.run(&tape, x, Mode::Eval, None)?;
        let out = pass.output.value();
        Ok((*out).clone())
    }

    /// Eval-mode output with the skip tensor of encoder level `level`
    /// replaced by zeros.
    pub fn predict_without_skip(&self, input: &Tensor<F>, level: usize) -> Result<Tensor<F>> {
        let tape = Tape::new();
        let x = tape.constant(input.clone());
        let (pass, _) = self.run(&tape, x, Mode::Eval, Some(level))?;
        let out = pass.output.value();
        Ok((*out).clone())
    }

    #[allow(clippy::type_complexity)]
    fn run<'t>(
        &self,
        tape: &'t Tape<F>,
        input: Var<'t, F>,
        mode: Mode,
        zero_skip: Option<usize>,
    ) -> Result<(ForwardPass<'t, F>, Vec<(String, Tensor<F>)>)> {
        let shape = input.shape();
        let [_, c, h, w] = shape[..] else {
            return Err(Error::ShapeMismatch(format!("UNet input {shape:?} is not 4-D")));
        };
        if c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "UNet expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        validate_depth(h, w, self.config.depth)?;

        let mut rec = Recorder {
            tape,
            model: self,
            mode,
            params: Vec::new(),
            running: Vec::new(),
        };
        let depth = self.config.depth;
        let mut x = input;
        let mut skips = Vec::with_capacity(depth);
        for i in 0..depth {
            x = rec.double_conv(&format!("enc{i}"), x)?;
            skips.push(x);
            x = nn::maxpool2d(x)?;
        }
        x = rec.double_conv(&format!("enc{depth}"), x)?;

        for i in (0..depth).rev() {
            let w = rec.param(format!("up{i}.deconv.weight"))?;
            let up = nn::conv_transpose2d(x, w, 2)?;
            let [_, _, uh, uw] = up.shape()[..] else {
                unreachable!("conv_transpose2d output is 4-D")
            };
            let mut skip = skips[i];
            if zero_skip == Some(i) {
                skip = skip.scale(F::zero())?;
            }
            let skip = match self.config.skip_mode {
                SkipMode::Resize => nn::resize_bilinear(skip, uh, uw)?,
                SkipMode::CenterCrop => nn::center_crop(skip, uh, uw)?,
            };
            x = nn::concat_channels(skip, up)?;
            x = rec.double_conv(&format!("dec{i}"), x)?;
        }
        let hw = rec.param("head.weight".into())?;
        let hb = rec.param("head.bias".into())?;
        let logits = nn::conv2d(x, hw, Some(hb), 1, 0)?;
        let output = nn::sigmoid(logits)?;
        Ok((
            ForwardPass {
                output,
                params: rec.params,
            },
            rec.running,
        ))
    }

    /// Writes the parameters (including running statistics) as a checkpoint.
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        checkpoint::write(
            path,
            &Checkpoint {
                config: self.config.clone(),
                tensors: self.params.clone(),
                meta: serde_json::Value::Null,
            },
        )
    }

    /// Loads parameters saved for `expected`; the first missing, renamed or
    /// reshaped tensor is reported by name.
    pub fn load_weights(path: &Path, expected: &UNetConfig) -> Result<Self> {
        let ckpt = checkpoint::read::<F>(path)?;
        Self::from_tensors(expected.clone(), &ckpt.tensors)
    }
}
