//! 2-D cross-correlation over `B×H×W×C` images with `k×k×Cin×Cout` kernels.

use rayon::prelude::*;

use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::{bhwc, Real, Tensor};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `dilation·(k−1)/2`; keeps spatial size at stride 1.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
        }
    }
}

impl Conv2dOptions {
    pub fn dilated(dilation: usize) -> Self {
        Conv2dOptions {
            dilation,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    dil: usize,
    pad: usize,
}

impl Geometry {
    /// Input coordinate hit by output `o` through tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, size: usize) -> Option<usize> {
        let p = (o * self.stride + t * self.dil) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < size).then_some(p as usize)
    }
}

fn geometry<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOptions,
) -> Result<Geometry> {
    let [b, h, wd, cin] = bhwc("conv2d", x)?;
    w.expect_rank("conv2d", 4)?;
    let ws = w.shape();
    let k = ws[0];
    if ws[1] != k {
        return Err(Error::shape("conv2d", "kernel", format!("kernel must be square, got {ws:?}")));
    }
    if k % 2 == 0 {
        return Err(Error::shape("conv2d", "kernel", format!("kernel size {k} must be odd")));
    }
    if ws[2] != cin {
        return Err(Error::shape(
            "conv2d",
            "input channels",
            format!("input has {cin}, kernel expects {}", ws[2]),
        ));
    }
    let cout = ws[3];
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                "bias",
                format!("expected [{cout}], got {:?}", bias.shape()),
            ));
        }
    }
    if opts.stride == 0 || opts.dilation == 0 {
        return Err(Error::shape("conv2d", "stride/dilation", "must be at least 1"));
    }
    let span = opts.dilation * (k - 1);
    let pad = match opts.padding {
        Padding::Same => span / 2,
        Padding::Valid => 0,
    };
    if h + 2 * pad <= span || wd + 2 * pad <= span {
        return Err(Error::shape(
            "conv2d",
            "spatial size",
            format!("{h}x{wd} smaller than kernel span {}", span + 1),
        ));
    }
    let oh = (h + 2 * pad - span - 1) / opts.stride + 1;
    let ow = (wd + 2 * pad - span - 1) / opts.stride + 1;
    Ok(Geometry {
        b,
        h,
        w: wd,
        cin,
        cout,
        k,
        oh,
        ow,
        stride: opts.stride,
        dil: opts.dilation,
        pad,
    })
}

fn forward<T: Real>(g: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); g.b * g.oh * g.ow * g.cout];
    let row_len = g.ow * g.cout;
    out.par_chunks_mut(row_len).enumerate().for_each(|(row, out_row)| {
        let (bi, oy) = (row / g.oh, row % g.oh);
        for ox in 0..g.ow {
            let acc = &mut out_row[ox * g.cout..(ox + 1) * g.cout];
            if let Some(bias) = bias {
                acc.copy_from_slice(bias);
            }
            for ky in 0..g.k {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.k {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let px = &x[((bi * g.h + iy) * g.w + ix) * g.cin..][..g.cin];
                    let tap = &w[(ky * g.k + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (&xv, wrow) in px.iter().zip(tap.chunks_exact(g.cout)) {
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    });
    out
}

fn grad_input<T: Real>(g: &Geometry, gy: &[T], w: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); g.b * g.h * g.w * g.cin];
    dx.par_chunks_mut(g.w * g.cin).enumerate().for_each(|(row, dx_row)| {
        let (bi, iy) = (row / g.h, row % g.h);
        for ix in 0..g.w {
            let acc = &mut dx_row[ix * g.cin..(ix + 1) * g.cin];
            for ky in 0..g.k {
                let ny = (iy + g.pad) as isize - (ky * g.dil) as isize;
                if ny < 0 || ny as usize % g.stride != 0 || ny as usize / g.stride >= g.oh {
                    continue;
                }
                let oy = ny as usize / g.stride;
                for kx in 0..g.k {
                    let nx = (ix + g.pad) as isize - (kx * g.dil) as isize;
                    if nx < 0 || nx as usize % g.stride != 0 || nx as usize / g.stride >= g.ow {
                        continue;
                    }
                    let ox = nx as usize / g.stride;
                    let gp = &gy[((bi * g.oh + oy) * g.ow + ox) * g.cout..][..g.cout];
                    let tap = &w[(ky * g.k + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (a, wrow) in acc.iter_mut().zip(tap.chunks_exact(g.cout)) {
                        let mut s = T::zero();
                        for (&gv, &wv) in gp.iter().zip(wrow) {
                            s += gv * wv;
                        }
                        *a += s;
                    }
                }
            }
        }
    });
    dx
}

fn grad_weight<T: Real>(g: &Geometry, gy: &[T], x: &[T]) -> Vec<T> {
    let tap_len = g.cin * g.cout;
    let mut dw = vec![T::zero(); g.k * g.k * tap_len];
    dw.par_chunks_mut(tap_len).enumerate().for_each(|(tap, acc)| {
        let (ky, kx) = (tap / g.k, tap % g.k);
        for bi in 0..g.b {
            for oy in 0..g.oh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for ox in 0..g.ow {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let px = &x[((bi * g.h + iy) * g.w + ix) * g.cin..][..g.cin];
                    let gp = &gy[((bi * g.oh + oy) * g.ow + ox) * g.cout..][..g.cout];
                    for (&xv, arow) in px.iter().zip(acc.chunks_exact_mut(g.cout)) {
                        for (a, &gv) in arow.iter_mut().zip(gp) {
                            *a += xv * gv;
                        }
                    }
                }
            }
        }
    });
    dw
}

fn grad_bias<T: Real>(cout: usize, gy: &[T]) -> Vec<T> {
    let mut db = vec![T::zero(); cout];
    for px in gy.chunks_exact(cout) {
        for (a, &v) in db.iter_mut().zip(px) {
            *a += v;
        }
    }
    db
}

/// Cross-correlation `y[b,y,x,o] = bias[o] + Σ x[b, y·s + ky·d − p, x·s + kx·d − p, i] · w[ky,kx,i,o]`.
pub fn conv2d<'t, T: Real>(
    x: &Var<'t, T>,
    w: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    opts: Conv2dOptions,
) -> Result<Var<'t, T>> {
    let g = geometry(x.value(), w.value(), bias.map(|b| b.value()), opts)?;
    let out = forward(
        &g,
        x.value().data(),
        w.value().data(),
        bias.map(|b| b.value().data()),
    );
    let y = Tensor::from_parts(vec![g.b, g.oh, g.ow, g.cout], out);
    let (xv, wv) = (x.value().clone(), w.value().clone());
    let backward = move |gy: &Tensor<T>, needs: &[bool]| {
        let mut grads = vec![
            needs[0].then(|| Tensor::from_parts(xv.shape().to_vec(), grad_input(&g, gy.data(), wv.data()))),
            needs[1].then(|| Tensor::from_parts(wv.shape().to_vec(), grad_weight(&g, gy.data(), xv.data()))),
        ];
        if needs.len() > 2 {
            grads.push(needs[2].then(|| Tensor::from_parts(vec![g.cout], grad_bias(g.cout, gy.data()))));
        }
        grads
    };
    Ok(match bias {
        Some(b) => x.tape().record(y, &[x, w, b], backward),
        None => x.tape().record(y, &[x, w], backward),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn one_by_one_identity() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_fn(&[1, 3, 4, 1], |i| i as f64 * 0.5).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]).unwrap());
        let y = conv2d(&x, &w, Some(&b), Conv2dOptions::default()).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn constant_image_all_ones_kernel() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::full(&[1, 5, 5, 1], 5.0).unwrap());
        let w = tape.constant(Tensor::ones(&[3, 3, 1, 1]).unwrap());
        let y = conv2d(&x, &w, None, Conv2dOptions::default()).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5, 1]);
        assert_eq!(y.value().at(&[0, 2, 2, 0]), 45.0);
        assert_eq!(y.value().at(&[0, 0, 0, 0]), 20.0);
    }

    #[test]
    fn output_sizes() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.constant(Tensor::zeros(&[2, 7, 9, 3]).unwrap());
        let w = tape.constant(Tensor::zeros(&[3, 3, 3, 4]).unwrap());
        let same = conv2d(&x, &w, None, Conv2dOptions::default()).unwrap();
        assert_eq!(same.shape(), &[2, 7, 9, 4]);
        let valid = Conv2dOptions {
            padding: Padding::Valid,
            ..Default::default()
        };
        assert_eq!(conv2d(&x, &w, None, valid).unwrap().shape(), &[2, 5, 7, 4]);
        let strided = Conv2dOptions {
            stride: 2,
            ..Default::default()
        };
        assert_eq!(conv2d(&x, &w, None, strided).unwrap().shape(), &[2, 4, 5, 4]);
        assert_eq!(
            conv2d(&x, &w, None, Conv2dOptions::dilated(2)).unwrap().shape(),
            &[2, 7, 9, 4]
        );
    }

    #[test]
    fn shape_errors_name_the_dimension() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.constant(Tensor::zeros(&[1, 4, 4, 2]).unwrap());
        let w = tape.constant(Tensor::zeros(&[3, 3, 3, 1]).unwrap());
        let err = conv2d(&x, &w, None, Conv2dOptions::default()).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let even = tape.constant(Tensor::zeros(&[2, 2, 2, 1]).unwrap());
        assert!(conv2d(&x, &even, None, Conv2dOptions::default()).is_err());
    }
}
