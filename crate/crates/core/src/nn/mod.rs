//! Differentiable layers the UNet is assembled from.
//!
//! Each layer is a free function over [`Var`](crate::Var)s that computes its
//! output eagerly and records a backward closure on the tape. The raw kernels
//! parallelize over samples or planes through [`crate::par`] and reduce
//! per-sample partial results in sample order, so results do not depend on
//! the thread count.

mod activation;
mod conv;
mod norm;
mod pool;
mod spatial;

pub use activation::{relu, sigmoid, sigmoid_scalar};
pub use conv::{conv2d, conv2d_forward, conv_transpose2d, conv_transpose2d_forward, Conv2dParams};
pub use norm::{batchnorm2d, BatchNormOptions, BatchNormOutput};
pub use pool::maxpool2d;
pub use spatial::{
    bilinear_taps, center_crop, concat_channels, resize_bilinear, resize_bilinear_forward,
    resize_nearest_plane,
};

use serde::{Deserialize, Serialize};

/// Train or eval behaviour for layers with batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}
