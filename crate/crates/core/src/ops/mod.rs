//! Differentiable kernels.
//!
//! Every function takes [`Var`]s, computes its output eagerly, and records its
//! adjoint on the owning tape. Reductions use a fixed order per output
//! element, so results do not depend on the number of worker threads.

mod conv;
mod deform;
mod elementwise;
mod linear;
mod norm;
mod structural;

pub use conv::{conv2d, Conv2dOptions, Padding};
pub use deform::{deform_conv2d, sample_bilinear};
pub use elementwise::{
    abs, add, gelu, leaky_relu, mu_law, mul, mul_channel, scale, sigmoid, sub, LEAKY_SLOPE,
};
pub use linear::{bmm, linear};
pub use norm::{layer_norm, softmax, LN_EPS};
pub use structural::{
    concat_last, gather, gather_rows, global_avg_pool, mean, permute, permute_index, reshape, sum,
};
