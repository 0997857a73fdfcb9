//! Binary image segmentation built from scratch.
//!
//! - [`Tensor`] / [`Tape`] / [`Var`]: dense tensors with tape-based
//!   reverse-mode autodiff.
//! - [`nn`]: convolution, transposed convolution, max-pooling, batch norm,
//!   activations, bilinear resize, center crop and channel concatenation.
//! - [`unet`]: a UNet whose depth is checked against the input size, with
//!   resize-based skip connections and a sigmoid head.
//! - [`loss`]: BCE, two-class CE, focal, soft Dice, the mixed
//!   `alpha * focal - ln(dice)` objective and the binary Dice coefficient.
//! - [`optim`]: Adam and the stepped learning-rate schedule.
//! - [`data`]: image/mask loading, resizing, flip/rotation augmentation,
//!   splitting and batching.
//! - [`train`]: the training loop, checkpoints, prediction, evaluation and
//!   loss-curve plotting behind the `unetseg` CLI.

// `Var::add` etc. are fallible graph ops, and `!(x > 0.0)` deliberately
// rejects NaN.
#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod par;
pub mod real;
pub mod tensor;
pub mod train;
pub mod unet;

pub use autograd::{BackwardCtx, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
