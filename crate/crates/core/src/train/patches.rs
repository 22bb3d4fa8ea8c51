//! Sliding-window cropping and the eight rotation/flip augmentations.

use crate::error::{Error, Result};
use crate::hdr::SampleTriplet;

/// Window origins `0, stride, 2·stride, …` plus a final origin at
/// `len − patch` when the stride does not land there.
pub fn patch_positions(len: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 {
        return Err(Error::Config("patch and stride must be at least 1".into()));
    }
    if stride > patch {
        return Err(Error::Config(format!("stride {stride} exceeds patch {patch}")));
    }
    if len < patch {
        return Err(Error::Config(format!("image side {len} is smaller than patch {patch}")));
    }
    let mut out: Vec<usize> = (0..=len - patch).step_by(stride).collect();
    if *out.last().expect("at least origin 0") != len - patch {
        out.push(len - patch);
    }
    Ok(out)
}

/// All `patch×patch` crops of a triplet, row-major by origin. Ground truth is
/// cropped at the same coordinates.
pub fn crop_patches(s: &SampleTriplet, patch: usize, stride: usize) -> Result<Vec<SampleTriplet>> {
    let ys = patch_positions(s.height(), patch, stride)?;
    let xs = patch_positions(s.width(), patch, stride)?;
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y0 in &ys {
        for &x0 in &xs {
            out.push(s.map_pixels(format!("{}@{y0},{x0}", s.id), |_, w, px| {
                let mut crop = Vec::with_capacity(patch * patch * 3);
                for y in y0..y0 + patch {
                    crop.extend_from_slice(&px[(y * w + x0) * 3..(y * w + x0 + patch) * 3]);
                }
                Ok((patch, patch, crop))
            })?);
        }
    }
    Ok(out)
}

/// Rotation by `code % 4` quarter turns counter-clockwise, preceded by a
/// horizontal flip when `code >= 4`.
pub fn transform_pixels(h: usize, w: usize, px: &[f32], code: u8) -> Result<(usize, usize, Vec<f32>)> {
    if code > 7 {
        return Err(Error::Config(format!("augmentation code {code} outside 0..=7")));
    }
    let quarter = code % 4;
    if quarter % 2 == 1 && h != w {
        return Err(Error::Config(format!("cannot rotate a non-square {h}x{w} patch by 90 degrees")));
    }
    let flip = code >= 4;
    let mut out = Vec::with_capacity(px.len());
    for y in 0..h {
        for x in 0..w {
            // Source of output (y, x) under the inverse rotation.
            let (sy, sx) = match quarter {
                0 => (y, x),
                1 => (x, w - 1 - y),
                2 => (h - 1 - y, w - 1 - x),
                _ => (h - 1 - x, y),
            };
            let sx = if flip { w - 1 - sx } else { sx };
            out.extend_from_slice(&px[(sy * w + sx) * 3..(sy * w + sx) * 3 + 3]);
        }
    }
    Ok((h, w, out))
}

/// Applies one dihedral transform to every exposure and the ground truth.
pub fn augment(s: &SampleTriplet, code: u8) -> Result<SampleTriplet> {
    if code == 0 {
        return Ok(s.clone());
    }
    s.map_pixels(s.id.clone(), |h, w, px| transform_pixels(h, w, px, code))
}

/// The code that undoes `code`.
pub fn inverse_code(code: u8) -> u8 {
    if code >= 4 {
        code
    } else {
        (4 - code) % 4
    }
}
