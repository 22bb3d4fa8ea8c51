//! Deformable 3×3-style convolution (stride 1, same padding).
//!
//! The offset field has shape `B×H×W×(2·k·k)`: for tap `t = ky·k + kx`,
//! channel `2t` holds the row displacement and `2t + 1` the column
//! displacement, in pixels. Each tap samples the input at
//! `(y + ky − k/2 + Δy, x + kx − k/2 + Δx)` by bilinear interpolation. The
//! image is zero outside its bounds (matching the zero padding of
//! [`conv2d`](super::conv2d)) and sample coordinates are clamped to the
//! one-pixel zero ring `[-1, H] × [-1, W]`; a clamped coordinate passes no
//! gradient to its offset.

use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::{bhwc, Real, Tensor};
use crate::Error;

/// Bilinear sampling footprint of one continuous coordinate.
#[derive(Debug, Clone, Copy)]
struct Footprint<T> {
    y0: isize,
    x0: isize,
    fy: T,
    fx: T,
    clamped_y: bool,
    clamped_x: bool,
}

impl<T: Real> Footprint<T> {
    fn new(py: T, px: T, h: usize, w: usize) -> Self {
        let (cy, clamped_y) = clamp_coord(py, h);
        let (cx, clamped_x) = clamp_coord(px, w);
        let y0 = cy.floor();
        let x0 = cx.floor();
        Footprint {
            y0: y0.to_isize().unwrap_or(-1),
            x0: x0.to_isize().unwrap_or(-1),
            fy: cy - y0,
            fx: cx - x0,
            clamped_y,
            clamped_x,
        }
    }

    /// The four corners with their interpolation weights; corners outside the
    /// image are reported as `None`.
    fn corners(&self, h: usize, w: usize) -> [(Option<usize>, T); 4] {
        let one = T::one();
        let at = |dy: isize, dx: isize| {
            let (y, x) = (self.y0 + dy, self.x0 + dx);
            (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| y as usize * w + x as usize)
        };
        [
            (at(0, 0), (one - self.fy) * (one - self.fx)),
            (at(0, 1), (one - self.fy) * self.fx),
            (at(1, 0), self.fy * (one - self.fx)),
            (at(1, 1), self.fy * self.fx),
        ]
    }
}

fn clamp_coord<T: Real>(p: T, size: usize) -> (T, bool) {
    let lo = -T::one();
    let hi = T::lit(size as f64);
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Samples every channel of batch element `b` of a `B×H×W×C` image at a
/// continuous position.
pub fn sample_bilinear<T: Real>(x: &Tensor<T>, b: usize, py: T, px: T) -> Result<Vec<T>> {
    let [bn, h, w, c] = bhwc("sample_bilinear", x)?;
    if b >= bn {
        return Err(Error::shape("sample_bilinear", "batch", format!("{b} >= {bn}")));
    }
    let img = &x.data()[b * h * w * c..(b + 1) * h * w * c];
    let mut out = vec![T::zero(); c];
    let fp = Footprint::new(py, px, h, w);
    for (idx, wt) in fp.corners(h, w) {
        if let Some(i) = idx {
            for (o, &v) in out.iter_mut().zip(&img[i * c..(i + 1) * c]) {
                *o += wt * v;
            }
        }
    }
    Ok(out)
}

pub fn deform_conv2d<'t, T: Real>(
    x: &Var<'t, T>,
    w: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    offsets: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let [b, h, wd, cin] = bhwc("deform_conv2d", x.value())?;
    w.value().expect_rank("deform_conv2d", 4)?;
    let ws = w.shape().to_vec();
    let k = ws[0];
    if ws[1] != k || k % 2 == 0 {
        return Err(Error::shape("deform_conv2d", "kernel", format!("need odd square kernel, got {ws:?}")));
    }
    if ws[2] != cin {
        return Err(Error::shape(
            "deform_conv2d",
            "input channels",
            format!("input has {cin}, kernel expects {}", ws[2]),
        ));
    }
    let cout = ws[3];
    let taps = k * k;
    if offsets.shape() != [b, h, wd, 2 * taps] {
        return Err(Error::shape(
            "deform_conv2d",
            "offset channels",
            format!("expected [{b}, {h}, {wd}, {}], got {:?}", 2 * taps, offsets.shape()),
        ));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::shape("deform_conv2d", "bias", format!("expected [{cout}]")));
        }
    }
    let pad = (k / 2) as isize;
    let xv = x.value().clone();
    let wv = w.value().clone();
    let ov = offsets.value().clone();
    let geom = DeformGeometry {
        b,
        h,
        w: wd,
        cin,
        cout,
        k,
        pad,
    };

    let mut out = vec![T::zero(); b * h * wd * cout];
    let mut sample = vec![T::zero(); cin];
    for bi in 0..b {
        let img = &xv.data()[bi * h * wd * cin..(bi + 1) * h * wd * cin];
        for y in 0..h {
            for xx in 0..wd {
                let pos = (bi * h + y) * wd + xx;
                let acc = &mut out[pos * cout..(pos + 1) * cout];
                if let Some(bias) = bias {
                    acc.copy_from_slice(bias.value().data());
                }
                let off = &ov.data()[pos * 2 * taps..(pos + 1) * 2 * taps];
                for t in 0..taps {
                    let fp = geom.footprint(y, xx, t, off);
                    sample.iter_mut().for_each(|s| *s = T::zero());
                    for (idx, wt) in fp.corners(h, wd) {
                        if let Some(i) = idx {
                            for (s, &v) in sample.iter_mut().zip(&img[i * cin..(i + 1) * cin]) {
                                *s += wt * v;
                            }
                        }
                    }
                    let tap = &wv.data()[t * cin * cout..(t + 1) * cin * cout];
                    for (&sv, wrow) in sample.iter().zip(tap.chunks_exact(cout)) {
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += sv * wv;
                        }
                    }
                }
            }
        }
    }
    let y = Tensor::from_parts(vec![b, h, wd, cout], out);
    let backward = move |gy: &Tensor<T>, needs: &[bool]| geom.backward(&xv, &wv, &ov, gy, needs);
    Ok(match bias {
        Some(bv) => x.tape().record(y, &[x, w, offsets, bv], backward),
        None => x.tape().record(y, &[x, w, offsets], backward),
    })
}

#[derive(Debug, Clone, Copy)]
struct DeformGeometry {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    pad: isize,
}

impl DeformGeometry {
    fn footprint<T: Real>(&self, y: usize, x: usize, t: usize, off: &[T]) -> Footprint<T> {
        let (ky, kx) = ((t / self.k) as isize, (t % self.k) as isize);
        let py = T::lit((y as isize + ky - self.pad) as f64) + off[2 * t];
        let px = T::lit((x as isize + kx - self.pad) as f64) + off[2 * t + 1];
        Footprint::new(py, px, self.h, self.w)
    }

    fn backward<T: Real>(
        &self,
        xv: &Tensor<T>,
        wv: &Tensor<T>,
        ov: &Tensor<T>,
        gy: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let DeformGeometry {
            b, h, w, cin, cout, k, ..
        } = *self;
        let taps = k * k;
        let one = T::one();
        let mut dx = vec![T::zero(); xv.numel()];
        let mut dw = vec![T::zero(); wv.numel()];
        let mut doff = vec![T::zero(); ov.numel()];
        let mut db = vec![T::zero(); cout];
        let mut sample = vec![T::zero(); cin];
        let mut dsample = vec![T::zero(); cin];

        for bi in 0..b {
            let base = bi * h * w * cin;
            let img = &xv.data()[base..base + h * w * cin];
            for y in 0..h {
                for xx in 0..w {
                    let pos = (bi * h + y) * w + xx;
                    let g = &gy.data()[pos * cout..(pos + 1) * cout];
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                    let off = &ov.data()[pos * 2 * taps..(pos + 1) * 2 * taps];
                    for t in 0..taps {
                        let fp = self.footprint(y, xx, t, off);
                        let corners = fp.corners(h, w);
                        let pixel = |idx: Option<usize>, ci: usize| idx.map_or(T::zero(), |i| img[i * cin + ci]);
                        sample.iter_mut().for_each(|s| *s = T::zero());
                        for (idx, wt) in corners {
                            if let Some(i) = idx {
                                for (s, &v) in sample.iter_mut().zip(&img[i * cin..(i + 1) * cin]) {
                                    *s += wt * v;
                                }
                            }
                        }
                        let tap_w = &wv.data()[t * cin * cout..(t + 1) * cin * cout];
                        let tap_dw = &mut dw[t * cin * cout..(t + 1) * cin * cout];
                        for ci in 0..cin {
                            let wrow = &tap_w[ci * cout..(ci + 1) * cout];
                            let mut ds = T::zero();
                            for (&wv, &gv) in wrow.iter().zip(g) {
                                ds += wv * gv;
                            }
                            dsample[ci] = ds;
                            let sv = sample[ci];
                            for (d, &gv) in tap_dw[ci * cout..(ci + 1) * cout].iter_mut().zip(g) {
                                *d += sv * gv;
                            }
                        }
                        for (idx, wt) in corners {
                            if let Some(i) = idx {
                                for (d, &ds) in dx[base + i * cin..base + (i + 1) * cin].iter_mut().zip(&dsample) {
                                    *d += wt * ds;
                                }
                            }
                        }
                        let (mut gdy, mut gdx) = (T::zero(), T::zero());
                        for ci in 0..cin {
                            let v00 = pixel(corners[0].0, ci);
                            let v01 = pixel(corners[1].0, ci);
                            let v10 = pixel(corners[2].0, ci);
                            let v11 = pixel(corners[3].0, ci);
                            gdy += dsample[ci] * ((one - fp.fx) * (v10 - v00) + fp.fx * (v11 - v01));
                            gdx += dsample[ci] * ((one - fp.fy) * (v01 - v00) + fp.fy * (v11 - v10));
                        }
                        if !fp.clamped_y {
                            doff[pos * 2 * taps + 2 * t] += gdy;
                        }
                        if !fp.clamped_x {
                            doff[pos * 2 * taps + 2 * t + 1] += gdx;
                        }
                    }
                }
            }
        }
        let mut grads = vec![
            needs[0].then(|| Tensor::from_parts(xv.shape().to_vec(), dx)),
            needs[1].then(|| Tensor::from_parts(wv.shape().to_vec(), dw)),
            needs[2].then(|| Tensor::from_parts(ov.shape().to_vec(), doff)),
        ];
        if needs.len() > 3 {
            grads.push(needs[3].then(|| Tensor::from_parts(vec![cout], db)));
        }
        grads
    }
}
