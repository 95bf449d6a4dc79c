//! Minimal tensor and layer library: forward passes, hand-derived backward
//! passes, and the Adam optimizer.
//!
//! There is no autodiff graph. Each layer exposes a pure forward function and
//! a matching backward function that consumes the upstream gradient and the
//! cached forward inputs. Training runs in `f32`; gradient checks instantiate
//! the same code at `f64`.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod gradcheck;
mod linear;
mod pool;
mod residual;
mod tensor;

pub use activation::{relu_backward, relu_forward, sigmoid, sigmoid_slice};
pub use adam::{adam_step, AdamHyper, AdamState};
pub use batchnorm::{BatchNorm2d, BnMode};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_dim, Conv2d};
pub use gradcheck::{
    central_diff_grad, check_batchnorm, check_conv2d, check_linear, check_pool, check_relu,
    check_residual_block, max_rel_err, GradCheckReport, GroupReport, FD_STEP,
};
pub use linear::{linear_backward, linear_forward, Linear};
pub use pool::{global_avg_pool_backward, global_avg_pool_forward, max_pool_backward, max_pool_forward};
pub use residual::ResidualBlock;
pub use tensor::{Matrix, Tensor4};

use std::fmt;

/// Element type for all numeric kernels. `f32` for training, `f64` for
/// gradient checks.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
