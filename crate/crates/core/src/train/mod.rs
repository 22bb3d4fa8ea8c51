//! Objective, optimiser, data pipeline and the training loop.

mod adam;
mod loss;
mod patches;
mod synth;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{l1_tonemapped, l1_tonemapped_loss};
pub use patches::{augment, crop_patches, inverse_code, patch_positions, transform_pixels};
pub use synth::{synth_dataset, synth_dataset_with, SynthOptions, SYNTH_EXPOSURES};
pub use trainer::{
    dataset_loss, dataset_psnr_mu, split_validation, train_loop, LogRecord, TrainConfig, TrainSummary, Trainer,
    CHECKPOINT_FILE, LOG_FILE,
};
