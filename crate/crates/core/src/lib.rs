//! Multi-exposure HDR deghosting.
//!
//! Three LDR exposures are mapped into HDR space, gated by spatial attention
//! (including attention applied to the reference frame itself), and fused by
//! a hierarchical stack of dual-branch transformer blocks: a window
//! self-attention branch for long-range context and a deformable-convolution
//! channel-attention branch for local detail.
//!
//! Everything is built on the small tensor library in [`tensor`], [`ops`] and
//! [`autodiff`], which provides hand-written reverse-mode gradients that are
//! checked against central finite differences in [`gradcheck`].

pub mod autodiff;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod hdr;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use hdr::{HdrImage, LdrImage, SampleTriplet};
pub use model::{HdtConfig, Model, Variant};
pub use tensor::{DType, Real, Tensor};
pub use train::TrainConfig;
