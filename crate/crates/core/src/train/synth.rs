//! Procedural multi-exposure scenes: a smooth colour gradient plus soft
//! Gaussian blobs, exposed at `t = (1/4, 1, 4)`. Each scene is scaled so its
//! 99.9th-percentile radiance is 1, which makes the exposures consistent with
//! the normalised ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hdr::{HdrImage, LdrImage, SampleTriplet, DEFAULT_GAMMA};

pub const SYNTH_EXPOSURES: [f64; 3] = [0.25, 1.0, 4.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub height: usize,
    pub width: usize,
    pub blobs: usize,
    /// Maximum displacement in pixels of one blob in the non-reference frames.
    pub motion: f64,
    pub gamma: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            height: 32,
            width: 32,
            blobs: 3,
            motion: 0.0,
            gamma: DEFAULT_GAMMA,
        }
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
    color: [f64; 3],
}

struct Scene {
    base: [f64; 3],
    grad_y: [f64; 3],
    grad_x: [f64; 3],
    blobs: Vec<Blob>,
}

impl Scene {
    fn random(rng: &mut ChaCha8Rng, o: &SynthOptions) -> Self {
        let mut rgb = |lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let base = rgb(0.05, 0.3);
        let grad_y = rgb(-0.05, 0.3);
        let grad_x = rgb(-0.05, 0.3);
        let blobs = (0..o.blobs)
            .map(|_| Blob {
                cy: rng.random_range(0.0..o.height as f64),
                cx: rng.random_range(0.0..o.width as f64),
                sigma: rng.random_range(0.1..0.25) * o.height.min(o.width) as f64,
                color: [rng.random_range(0.2..2.5), rng.random_range(0.2..2.5), rng.random_range(0.2..2.5)],
            })
            .collect();
        Scene {
            base,
            grad_y,
            grad_x,
            blobs,
        }
    }

    /// Radiance with blob 0 displaced by `(dy, dx)`.
    fn render(&self, o: &SynthOptions, dy: f64, dx: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(o.height * o.width * 3);
        for y in 0..o.height {
            for x in 0..o.width {
                let (fy, fx) = (y as f64 / o.height as f64, x as f64 / o.width as f64);
                for c in 0..3 {
                    let mut v = self.base[c] + self.grad_y[c] * fy + self.grad_x[c] * fx;
                    for (i, b) in self.blobs.iter().enumerate() {
                        let (oy, ox) = if i == 0 { (dy, dx) } else { (0.0, 0.0) };
                        let r2 = (y as f64 - b.cy - oy).powi(2) + (x as f64 - b.cx - ox).powi(2);
                        v += b.color[c] * (-r2 / (2.0 * b.sigma * b.sigma)).exp();
                    }
                    out.push(v.max(0.02));
                }
            }
        }
        out
    }
}

/// `clamp((t · radiance)^(1/γ), 0, 1)`.
fn expose(radiance: &[f64], t: f64, gamma: f64) -> Vec<f32> {
    radiance.iter().map(|&r| ((t * r).powf(1.0 / gamma)).clamp(0.0, 1.0) as f32).collect()
}

fn synth_one(index: usize, seed: u64, o: &SynthOptions) -> Result<SampleTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let scene = Scene::random(&mut rng, o);
    let mut shift = || {
        if o.motion > 0.0 {
            (rng.random_range(-o.motion..=o.motion), rng.random_range(-o.motion..=o.motion))
        } else {
            (0.0, 0.0)
        }
    };
    let (s1, s3) = (shift(), shift());
    let raw = scene.render(o, 0.0, 0.0);
    let unit = HdrImage::new(o.height, o.width, raw.iter().map(|&v| v as f32).collect())?
        .normalized()
        .scale() as f64;
    let calibrate = |f: Vec<f64>| -> Vec<f64> { f.into_iter().map(|v| v / unit).collect() };
    let reference = calibrate(raw);
    let frames = [
        calibrate(scene.render(o, s1.0, s1.1)),
        reference.clone(),
        calibrate(scene.render(o, s3.0, s3.1)),
    ];
    let mut ldr = Vec::with_capacity(3);
    for (f, &t) in frames.iter().zip(&SYNTH_EXPOSURES) {
        ldr.push(LdrImage::new(o.height, o.width, expose(f, t, o.gamma), t)?);
    }
    let gt = HdrImage::new(o.height, o.width, reference.iter().map(|&v| v as f32).collect())?.normalized();
    SampleTriplet::new(
        format!("synth{index:04}"),
        ldr.try_into().expect("three frames"),
        Some(gt),
    )
}

/// `n` scenes of the given options, reproducible from `seed`.
pub fn synth_dataset_with(n: usize, seed: u64, o: &SynthOptions) -> Result<Vec<SampleTriplet>> {
    if n == 0 {
        return Err(Error::Config("synthetic dataset size must be at least 1".into()));
    }
    if o.height == 0 || o.width == 0 || !(o.gamma > 0.0) || !(o.motion >= 0.0) {
        return Err(Error::Config(format!("invalid synthetic options {o:?}")));
    }
    (0..n).into_par_iter().map(|i| synth_one(i, seed, o)).collect()
}

/// `n` static 32×32 scenes.
pub fn synth_dataset(n: usize, seed: u64) -> Result<Vec<SampleTriplet>> {
    synth_dataset_with(n, seed, &SynthOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdr::gamma_correct;

    #[test]
    fn reproducible_and_normalised() {
        let a = synth_dataset(3, 11).unwrap();
        assert_eq!(a, synth_dataset(3, 11).unwrap());
        assert_ne!(a, synth_dataset(3, 12).unwrap());
        for s in &a {
            assert_eq!(s.exposures(), SYNTH_EXPOSURES);
            let gt = s.ground_truth().unwrap();
            assert!(gt.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn static_scenes_are_exposure_consistent() {
        for s in synth_dataset(2, 5).unwrap() {
            let hdr: Vec<_> = s.ldr().iter().map(|l| gamma_correct::<f64>(l, DEFAULT_GAMMA).unwrap()).collect();
            let mut compared = 0;
            for i in 0..hdr[0].numel() {
                let unclamped = s.ldr().iter().all(|l| l.pixels()[i] > 0.0 && l.pixels()[i] < 1.0);
                if unclamped {
                    compared += 1;
                    let r = hdr[1].data()[i];
                    assert!((hdr[0].data()[i] - r).abs() <= 1e-5 * r.max(1.0));
                    assert!((hdr[2].data()[i] - r).abs() <= 1e-5 * r.max(1.0));
                }
            }
            assert!(compared > 0);
        }
    }

    #[test]
    fn motion_changes_only_non_reference_frames() {
        let o = SynthOptions {
            motion: 2.0,
            ..SynthOptions::default()
        };
        let moving = synth_dataset_with(1, 3, &o).unwrap();
        let still = synth_dataset_with(1, 3, &SynthOptions::default()).unwrap();
        assert_eq!(moving[0].reference(), still[0].reference());
        assert_ne!(moving[0].ldr()[0], still[0].ldr()[0]);
    }
}
