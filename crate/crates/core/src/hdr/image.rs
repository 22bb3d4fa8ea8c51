use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Ground-truth radiance is divided by this percentile before use.
pub const NORMALIZE_PERCENTILE: f64 = 0.999;

/// A display-referred exposure: `H×W×3` values in `[0, 1]` plus its exposure
/// time in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LdrImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    exposure: f64,
}

impl LdrImage {
    /// Pixels are clamped into `[0, 1]`; NaN maps to 0.
    pub fn new(height: usize, width: usize, mut pixels: Vec<f32>, exposure: f64) -> Result<Self> {
        check_dims("LDR image", height, width, pixels.len())?;
        if !(exposure > 0.0 && exposure.is_finite()) {
            return Err(Error::Config(format!("exposure time must be positive, got {exposure}")));
        }
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Ok(LdrImage {
            height,
            width,
            pixels,
            exposure,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    pub fn with_exposure(mut self, exposure: f64) -> Result<Self> {
        if !(exposure > 0.0 && exposure.is_finite()) {
            return Err(Error::Config(format!("exposure time must be positive, got {exposure}")));
        }
        self.exposure = exposure;
        Ok(self)
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_parts(
            vec![1, self.height, self.width, 3],
            self.pixels.iter().map(|&v| T::lit(v as f64)).collect(),
        )
    }
}

/// Linear radiance, `H×W×3`, non-negative and finite. `scale` is the divisor
/// applied by [`HdrImage::normalized`] (1 for raw radiance).
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    scale: f32,
}

impl HdrImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        check_dims("HDR image", height, width, pixels.len())?;
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite {
                what: format!("HDR radiance must be finite and non-negative, found {bad}"),
            });
        }
        Ok(HdrImage {
            height,
            width,
            pixels,
            scale: 1.0,
        })
    }

    /// Builds an image from a `1×H×W×3` tensor (model output).
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[3] != 3 {
            return Err(Error::shape("HdrImage::from_tensor", "shape", format!("expected [1, H, W, 3], got {s:?}")));
        }
        Self::new(s[1], s[2], t.data().iter().map(|v| v.to_f64_lossy() as f32).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_parts(
            vec![1, self.height, self.width, 3],
            self.pixels.iter().map(|&v| T::lit(v as f64)).collect(),
        )
    }

    /// Divides by the 99.9th-percentile value and clamps to `[0, 1]`. The
    /// divisor is kept in [`HdrImage::scale`] so the mapping can be undone.
    pub fn normalized(&self) -> HdrImage {
        let mut sorted = self.pixels.clone();
        sorted.sort_by(f32::total_cmp);
        let rank = ((NORMALIZE_PERCENTILE * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        let p = sorted[rank - 1];
        let divisor = if p > 0.0 { p } else { 1.0 };
        HdrImage {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| (v / divisor).min(1.0)).collect(),
            scale: self.scale * divisor,
        }
    }

    /// Radiance in the units of the original file.
    pub fn denormalized(&self) -> HdrImage {
        HdrImage {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| v * self.scale).collect(),
            scale: 1.0,
        }
    }

    pub(crate) fn with_scale(mut self, scale: f32) -> Self {
        self.scale = scale;
        self
    }
}

/// Three exposures ordered short → long; the middle one is the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTriplet {
    pub id: String,
    ldr: [LdrImage; 3],
    ground_truth: Option<HdrImage>,
}

impl SampleTriplet {
    pub fn new(id: impl Into<String>, ldr: [LdrImage; 3], ground_truth: Option<HdrImage>) -> Result<Self> {
        let (h, w) = (ldr[1].height, ldr[1].width);
        for (i, img) in ldr.iter().enumerate() {
            if img.height != h || img.width != w {
                return Err(Error::shape(
                    "SampleTriplet",
                    format!("exposure {i} size"),
                    format!("{}x{} vs reference {h}x{w}", img.height, img.width),
                ));
            }
        }
        if !(ldr[0].exposure < ldr[1].exposure && ldr[1].exposure < ldr[2].exposure) {
            return Err(Error::Config(format!(
                "exposure times must be strictly increasing, got {:?}",
                [ldr[0].exposure, ldr[1].exposure, ldr[2].exposure]
            )));
        }
        if let Some(gt) = &ground_truth {
            if gt.height != h || gt.width != w {
                return Err(Error::shape(
                    "SampleTriplet",
                    "ground truth size",
                    format!("{}x{} vs {h}x{w}", gt.height, gt.width),
                ));
            }
        }
        Ok(SampleTriplet {
            id: id.into(),
            ldr,
            ground_truth,
        })
    }

    pub fn ldr(&self) -> &[LdrImage; 3] {
        &self.ldr
    }

    pub fn reference(&self) -> &LdrImage {
        &self.ldr[1]
    }

    pub fn ground_truth(&self) -> Option<&HdrImage> {
        self.ground_truth.as_ref()
    }

    pub fn height(&self) -> usize {
        self.ldr[1].height
    }

    pub fn width(&self) -> usize {
        self.ldr[1].width
    }

    pub fn exposures(&self) -> [f64; 3] {
        [self.ldr[0].exposure, self.ldr[1].exposure, self.ldr[2].exposure]
    }

    /// Applies the same pixel transform to all exposures and the ground truth.
    /// `f` maps an `H×W×3` buffer to `(new_h, new_w, buffer)`.
    pub(crate) fn map_pixels(
        &self,
        id: String,
        f: impl Fn(usize, usize, &[f32]) -> Result<(usize, usize, Vec<f32>)>,
    ) -> Result<SampleTriplet> {
        let map_ldr = |img: &LdrImage| -> Result<LdrImage> {
            let (h, w, px) = f(img.height, img.width, &img.pixels)?;
            LdrImage::new(h, w, px, img.exposure)
        };
        let ldr = [map_ldr(&self.ldr[0])?, map_ldr(&self.ldr[1])?, map_ldr(&self.ldr[2])?];
        let ground_truth = match &self.ground_truth {
            Some(gt) => {
                let (h, w, px) = f(gt.height, gt.width, &gt.pixels)?;
                Some(HdrImage::new(h, w, px)?.with_scale(gt.scale))
            }
            None => None,
        };
        SampleTriplet::new(id, ldr, ground_truth)
    }
}

fn check_dims(what: &str, height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::shape("image", "size", format!("{what} must be non-empty")));
    }
    if height * width * 3 != len {
        return Err(Error::shape(
            "image",
            "pixel count",
            format!("{what} {height}x{width}x3 needs {} values, got {len}", height * width * 3),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ldr(t: f64) -> LdrImage {
        LdrImage::new(2, 2, vec![0.5; 12], t).unwrap()
    }

    #[test]
    fn ldr_clamps_and_validates_exposure() {
        let img = LdrImage::new(1, 1, vec![-0.5, 2.0, 0.25], 1.0).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 0.25]);
        assert!(LdrImage::new(1, 1, vec![0.0; 3], 0.0).is_err());
        assert!(LdrImage::new(1, 2, vec![0.0; 3], 1.0).is_err());
    }

    #[test]
    fn triplet_requires_strict_order() {
        assert!(SampleTriplet::new("a", [ldr(0.25), ldr(1.0), ldr(4.0)], None).is_ok());
        assert!(SampleTriplet::new("a", [ldr(1.0), ldr(1.0), ldr(4.0)], None).is_err());
        assert!(SampleTriplet::new("a", [ldr(4.0), ldr(1.0), ldr(0.25)], None).is_err());
        let small = LdrImage::new(1, 1, vec![0.0; 3], 4.0).unwrap();
        assert!(SampleTriplet::new("a", [ldr(0.25), ldr(1.0), small], None).is_err());
    }

    #[test]
    fn hdr_rejects_negative_and_nan() {
        assert!(HdrImage::new(1, 1, vec![0.0, -1.0, 0.0]).is_err());
        assert!(HdrImage::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn normalisation_round_trip() {
        let px: Vec<f32> = (0..3000).map(|i| i as f32 * 0.01).collect();
        let hdr = HdrImage::new(10, 100, px.clone()).unwrap();
        let n = hdr.normalized();
        assert!(n.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(n.scale() > 29.0 && n.scale() <= 29.99);
        let back = n.denormalized();
        for (a, b) in back.pixels().iter().zip(&px).take(2990) {
            assert!((a - b).abs() <= 1e-5 * b.max(1.0));
        }
    }
}
