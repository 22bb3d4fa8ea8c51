//! Gradient-check cases for the head, a DT block, the four model variants
//! and the full training objective. Parameters are drawn at random (offset
//! predictors included) so that deformable sampling positions are fractional
//! and every gate is away from saturation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{Case, MODEL_THRESHOLD};
use crate::tensor::Tensor;
use crate::train::l1_tonemapped_loss;

use super::config::{HdtConfig, Variant};
use super::dt::{dt_forward, DtLayers};
use super::head::HeadLayers;
use super::hdt::Model;
use super::params::{Builder, Init, ParamStore};

/// Elements checked per composite case.
pub const SUBSAMPLE: usize = 200;

pub const CASE_NAMES: &[&str] = &[
    "head",
    "dt_block",
    "dt_block_shifted",
    "model_bl",
    "model_sar",
    "model_dt",
    "model_sar_dt",
    "pipeline",
];

/// Replaces every parameter with a random value suited to gradient checks.
pub fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for i in 0..store.len() {
        let spec = store.specs()[i].clone();
        let offset = spec.name.contains(".offset.");
        let t = Tensor::from_fn(&spec.shape, |_| match spec.init {
            Init::Ones => rng.random_range(0.5..1.5),
            Init::Zeros if offset => rng.random_range(-0.5..0.5),
            Init::Zeros => rng.random_range(-0.1..0.1),
            Init::TruncNormal(_) => rng.random_range(-0.4..0.4),
            Init::FanIn(f) => {
                let bound = if offset { 0.6 } else { 1.5 / (f as f64).sqrt() };
                rng.random_range(-bound..bound)
            }
        })
        .expect("valid shape");
        store.set(i, t).expect("same shape");
    }
}

fn image(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).expect("valid shape")
}

fn model_case(variant: Variant, rng: &mut ChaCha8Rng, seed: u64) -> Result<Case> {
    let mut model = Model::<f64>::new(HdtConfig::tiny().with_variant(variant), seed)?;
    randomize(model.params_mut(), rng);
    let xs: Vec<_> = (0..3).map(|_| image(rng, &[1, 6, 6, 6], 0.0, 1.0)).collect();
    let mut inputs = xs;
    inputs.extend(model.params().tensors().iter().cloned());
    Ok(Case::new(inputs, move |v| model.forward(&v[3..], [&v[0], &v[1], &v[2]]))
        .holding_fixed(3)
        .subsampled(SUBSAMPLE)
        .with_threshold(MODEL_THRESHOLD))
}

/// A case for one of [`CASE_NAMES`], or `None` for other names.
pub fn case(name: &str, seed: u64) -> Result<Option<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = match name {
        "head" => {
            let mut b = Builder::default();
            let head = HeadLayers::build(&mut b, 4, true);
            let mut store = b.finish::<f64>(seed);
            randomize(&mut store, &mut rng);
            let mut inputs: Vec<_> = (0..3).map(|_| image(&mut rng, &[1, 5, 5, 6], 0.0, 1.0)).collect();
            inputs.extend(store.tensors().iter().cloned());
            Case::new(inputs, move |v| head.forward(&v[3..], [&v[0], &v[1], &v[2]])).subsampled(SUBSAMPLE)
        }
        "dt_block" | "dt_block_shifted" => {
            let cfg = HdtConfig::tiny();
            let shift = if name == "dt_block" { 0 } else { cfg.window / 2 };
            let mut b = Builder::default();
            let dt = DtLayers::build(&mut b, "dt", &cfg, shift);
            let mut store = b.finish::<f64>(seed);
            randomize(&mut store, &mut rng);
            let mut inputs = vec![image(&mut rng, &[1, 6, 6, cfg.embed], -1.0, 1.0)];
            inputs.extend(store.tensors().iter().cloned());
            Case::new(inputs, move |v| dt_forward(&v[1..], &dt, &v[0])).subsampled(SUBSAMPLE)
        }
        "model_bl" => model_case(Variant::Baseline, &mut rng, seed)?,
        "model_sar" => model_case(Variant::Sar, &mut rng, seed)?,
        "model_dt" => model_case(Variant::Dt, &mut rng, seed)?,
        "model_sar_dt" => model_case(Variant::SarDt, &mut rng, seed)?,
        "pipeline" => {
            let mut model = Model::<f64>::new(HdtConfig::tiny(), seed)?;
            randomize(model.params_mut(), &mut rng);
            let mut inputs: Vec<_> = (0..3).map(|_| image(&mut rng, &[1, 6, 6, 6], 0.0, 1.0)).collect();
            inputs.push(image(&mut rng, &[1, 6, 6, 3], 0.05, 0.95));
            inputs.extend(model.params().tensors().iter().cloned());
            Case::new(inputs, move |v| {
                let out = model.forward(&v[4..], [&v[0], &v[1], &v[2]])?;
                l1_tonemapped_loss(&out, &v[3], 5000.0)
            })
            .holding_fixed(4)
            .subsampled(SUBSAMPLE)
            .with_threshold(MODEL_THRESHOLD)
        }
        _ => return Ok(None),
    };
    Ok(Some(case))
}
