use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::image::{LdrImage, SampleTriplet};

pub const DEFAULT_GAMMA: f64 = 2.2;
pub const DEFAULT_MU: f64 = 5000.0;

/// Maps one LDR value into HDR space: `I^γ / t`.
pub fn gamma_map(value: f64, gamma: f64, exposure: f64) -> f64 {
    value.powf(gamma) / exposure
}

/// `Ĩ = I^γ / t` for every pixel and channel, as an `H×W×3` tensor.
pub fn gamma_correct<T: Real>(img: &LdrImage, gamma: f64) -> Result<Tensor<T>> {
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let t = img.exposure();
    if !(t > 0.0) {
        return Err(Error::Config(format!("exposure time must be positive, got {t}")));
    }
    Tensor::new(
        &[img.height(), img.width(), 3],
        img.pixels().iter().map(|&v| T::lit(gamma_map(v as f64, gamma, t))).collect(),
    )
}

/// μ-law tonemap `log(1 + μx) / log(1 + μ)` with `x` clamped to `[0, 1]`.
pub fn mu_law(x: f64, mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    Ok((mu * x.clamp(0.0, 1.0)).ln_1p() / mu.ln_1p())
}

pub fn mu_law_tensor<T: Real>(x: &Tensor<T>, mu: f64) -> Result<Tensor<T>> {
    if !(mu > 0.0) {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    let (m, denom) = (T::lit(mu), T::lit(mu.ln_1p()));
    Ok(x.map(|v| (m * v.max(T::zero()).min(T::one())).ln_1p() / denom))
}

/// The 6-channel network input of one exposure: `[I (RGB), Ĩ (RGB)]`, shaped
/// `1×H×W×6`.
pub fn build_input<T: Real>(img: &LdrImage, gamma: f64) -> Result<Tensor<T>> {
    let hdr = gamma_correct::<f64>(img, gamma)?;
    let mut data = Vec::with_capacity(img.pixels().len() * 2);
    for (ldr, lin) in img.pixels().chunks_exact(3).zip(hdr.data().chunks_exact(3)) {
        data.extend(ldr.iter().map(|&v| T::lit(v as f64)));
        data.extend(lin.iter().map(|&v| T::lit(v)));
    }
    Tensor::new(&[1, img.height(), img.width(), 6], data)
}

/// Inputs for all three exposures of a triplet, short to long.
pub fn build_inputs<T: Real>(s: &SampleTriplet, gamma: f64) -> Result<[Tensor<T>; 3]> {
    let [a, b, c] = s.ldr();
    Ok([build_input(a, gamma)?, build_input(b, gamma)?, build_input(c, gamma)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(mu_law(0.0, DEFAULT_MU).unwrap(), 0.0);
        assert_eq!(mu_law(1.0, DEFAULT_MU).unwrap(), 1.0);
        assert_eq!(gamma_map(1.0, DEFAULT_GAMMA, 1.0), 1.0);
        assert_eq!(gamma_map(0.0, DEFAULT_GAMMA, 0.25), 0.0);
        assert!(mu_law(0.5, 0.0).is_err());
        assert!(mu_law(0.5, -3.0).is_err());
    }

    #[test]
    fn input_channel_layout() {
        let img = LdrImage::new(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 0.5).unwrap();
        let t = build_input::<f64>(&img, 2.2).unwrap();
        assert_eq!(t.shape(), &[1, 2, 1, 6]);
        let g = gamma_correct::<f64>(&img, 2.2).unwrap();
        for p in 0..2 {
            for c in 0..3 {
                assert_eq!(t.at(&[0, p, 0, c]), img.pixels()[p * 3 + c] as f64);
                assert_eq!(t.at(&[0, p, 0, 3 + c]), g.at(&[p, 0, c]));
            }
        }
        assert!(gamma_correct::<f64>(&img, 0.0).is_err());
    }
}
