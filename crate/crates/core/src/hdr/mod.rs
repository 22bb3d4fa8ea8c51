//! LDR/HDR image types, radiometric mappings, file codecs and the on-disk
//! dataset layout.

mod dataset;
mod image;
mod pfm;
mod ppm;
mod radiometry;

pub use dataset::{load_dataset, load_sample, parse_exposures, write_sample};
pub use image::{HdrImage, LdrImage, SampleTriplet, NORMALIZE_PERCENTILE};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use radiometry::{
    build_input, build_inputs, gamma_correct, gamma_map, mu_law, mu_law_tensor, DEFAULT_GAMMA,
    DEFAULT_MU,
};
