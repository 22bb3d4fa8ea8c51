//! Feature-extraction head: a shared shallow conv stack applied to each
//! exposure, spatial attention of the non-reference features against the
//! reference, and the reference gate built from both attention maps.

use crate::autodiff::Var;
use crate::error::Result;
use crate::ops::{self, Conv2dOptions};
use crate::tensor::Real;

use super::params::{Builder, Conv};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadLayers {
    pub shallow: [Conv; 3],
    /// Attention for the short exposure against the reference.
    pub att_short: Attention,
    /// Attention for the long exposure against the reference.
    pub att_long: Attention,
    pub sar: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attention {
    pub fuse: Conv,
    pub out: Conv,
}

impl HeadLayers {
    pub fn build(b: &mut Builder, c: usize, sar: bool) -> Self {
        let o = Conv2dOptions::default();
        let shallow = [
            b.conv("head.shallow.0", 3, 6, c, o),
            b.conv("head.shallow.1", 3, c, c, o),
            b.conv("head.shallow.2", 3, c, c, o),
        ];
        let mut att = |name: &str| Attention {
            fuse: b.conv(&format!("head.{name}.0"), 3, 2 * c, c, o),
            out: b.conv(&format!("head.{name}.1"), 3, c, c, o),
        };
        let att_short = att("att_short");
        let att_long = att("att_long");
        HeadLayers {
            shallow,
            att_short,
            att_long,
            sar,
        }
    }

    /// `[I_1, I_2, I_3]` (each `B×H×W×6`) to `f_init` (`B×H×W×4C`).
    pub fn forward<'t, T: Real>(&self, p: &[Var<'t, T>], inputs: [&Var<'t, T>; 3]) -> Result<Var<'t, T>> {
        let f1 = extract_shallow(p, &self.shallow, inputs[0])?;
        let f2 = extract_shallow(p, &self.shallow, inputs[1])?;
        let f3 = extract_shallow(p, &self.shallow, inputs[2])?;
        let m1 = spatial_attention(p, &self.att_short, &f1, &f2)?;
        let m3 = spatial_attention(p, &self.att_long, &f3, &f2)?;
        let fm1 = apply_attention(&f1, &m1)?;
        let fm3 = apply_attention(&f3, &m3)?;
        let fm2 = if self.sar { sar(&f2, &m1, &m3)? } else { f2.clone() };
        concat_head(&fm1, &fm2, &fm3, &f2)
    }
}

/// Three conv + LeakyReLU layers.
pub fn extract_shallow<'t, T: Real>(p: &[Var<'t, T>], convs: &[Conv; 3], x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let mut h = x.clone();
    for c in convs {
        h = ops::leaky_relu(&c.apply(p, &h)?);
    }
    Ok(h)
}

/// `m = σ(conv(LeakyReLU(conv([f_i, f_ref]))))`, values in `(0, 1)`.
pub fn spatial_attention<'t, T: Real>(
    p: &[Var<'t, T>],
    att: &Attention,
    f: &Var<'t, T>,
    f_ref: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let cat = ops::concat_last(&[f, f_ref])?;
    let h = ops::leaky_relu(&att.fuse.apply(p, &cat)?);
    Ok(ops::sigmoid(&att.out.apply(p, &h)?))
}

pub fn apply_attention<'t, T: Real>(f: &Var<'t, T>, m: &Var<'t, T>) -> Result<Var<'t, T>> {
    ops::mul(f, m)
}

/// `(f_2 ⊙ m_1 + f_2 ⊙ m_3) / 2`.
pub fn sar<'t, T: Real>(f2: &Var<'t, T>, m1: &Var<'t, T>, m3: &Var<'t, T>) -> Result<Var<'t, T>> {
    let sum = ops::add(&ops::mul(f2, m1)?, &ops::mul(f2, m3)?)?;
    Ok(ops::scale(&sum, T::lit(0.5)))
}

/// Channel order `[fm_1, fm_2, fm_3, f_2]`.
pub fn concat_head<'t, T: Real>(fm1: &Var<'t, T>, fm2: &Var<'t, T>, fm3: &Var<'t, T>, f2: &Var<'t, T>) -> Result<Var<'t, T>> {
    ops::concat_last(&[fm1, fm2, fm3, f2])
}
