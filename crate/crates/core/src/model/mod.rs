//! Network architecture, parameters and checkpoints.

pub mod checkpoint;
mod config;
pub mod dt;
pub mod gradcheck;
pub mod head;
mod hdt;
pub mod params;
pub mod window;

pub use checkpoint::{model_checkpoint, model_from_checkpoint, Checkpoint};
pub use config::{HdtConfig, Variant};
pub use hdt::{hdt_forward, model_forward, Architecture, GroupLayers, Model};
pub use params::{Manifest, ParamStore};
