use rayon::prelude::*;

use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::{Real, Tensor};
use crate::Error;

/// `C (n×m) = op(A) · op(B)` where `op(A)` is `n×k`; a transposed operand is
/// stored in the opposite orientation.
#[allow(clippy::too_many_arguments)]
fn matmul<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize, a_t: bool, b_t: bool, c: &mut [T]) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let av = if a_t { a[p * n + i] } else { a[i * k + p] };
            if b_t {
                for (j, cv) in crow.iter_mut().enumerate() {
                    *cv += av * b[j * k + p];
                }
            } else {
                for (cv, &bv) in crow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                    *cv += av * bv;
                }
            }
        }
    }
}

/// Affine map on the last axis: `x (…×Din) · w (Din×Dout) + b`.
pub fn linear<'t, T: Real>(x: &Var<'t, T>, w: &Var<'t, T>, b: Option<&Var<'t, T>>) -> Result<Var<'t, T>> {
    w.value().expect_rank("linear", 2)?;
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    if x.value().last_dim() != din {
        return Err(Error::shape(
            "linear",
            "input features",
            format!("input has {}, weight expects {din}", x.value().last_dim()),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [dout] {
            return Err(Error::shape("linear", "bias", format!("expected [{dout}], got {:?}", b.shape())));
        }
    }
    let rows = x.value().numel() / din;
    let (xv, wv) = (x.value().clone(), w.value().clone());
    let bias = b.map(|b| b.value().clone());
    let mut out = vec![T::zero(); rows * dout];
    const BLOCK: usize = 64;
    out.par_chunks_mut(BLOCK * dout).enumerate().for_each(|(blk, chunk)| {
        let r0 = blk * BLOCK;
        let n = chunk.len() / dout;
        if let Some(b) = &bias {
            for row in chunk.chunks_exact_mut(dout) {
                row.copy_from_slice(b.data());
            }
        }
        matmul(&xv.data()[r0 * din..(r0 + n) * din], wv.data(), n, din, dout, false, false, chunk);
    });
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    let y = Tensor::from_parts(shape, out);
    let backward = move |g: &Tensor<T>, needs: &[bool]| {
        let gx = needs[0].then(|| {
            let mut dx = vec![T::zero(); rows * din];
            dx.par_chunks_mut(BLOCK * din).enumerate().for_each(|(blk, chunk)| {
                let r0 = blk * BLOCK;
                let n = chunk.len() / din;
                matmul(&g.data()[r0 * dout..(r0 + n) * dout], wv.data(), n, dout, din, false, true, chunk);
            });
            Tensor::from_parts(xv.shape().to_vec(), dx)
        });
        let gw = needs[1].then(|| {
            let mut dw = vec![T::zero(); din * dout];
            matmul(xv.data(), g.data(), din, rows, dout, true, false, &mut dw);
            Tensor::from_parts(vec![din, dout], dw)
        });
        let mut grads = vec![gx, gw];
        if needs.len() > 2 {
            grads.push(needs[2].then(|| {
                let mut db = vec![T::zero(); dout];
                for row in g.data().chunks_exact(dout) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                Tensor::from_parts(vec![dout], db)
            }));
        }
        grads
    };
    Ok(match b {
        Some(bv) => x.tape().record(y, &[x, w, bv], backward),
        None => x.tape().record(y, &[x, w], backward),
    })
}

/// Batched matrix product `[G, n, k] · [G, k, m]`, or `[G, n, k] · [G, m, k]ᵀ`
/// when `transpose_b` is set.
pub fn bmm<'t, T: Real>(a: &Var<'t, T>, b: &Var<'t, T>, transpose_b: bool) -> Result<Var<'t, T>> {
    a.value().expect_rank("bmm", 3)?;
    b.value().expect_rank("bmm", 3)?;
    let (g, n, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bg, bk, m) = if transpose_b {
        (b.shape()[0], b.shape()[2], b.shape()[1])
    } else {
        (b.shape()[0], b.shape()[1], b.shape()[2])
    };
    if bg != g || bk != k {
        return Err(Error::shape(
            "bmm",
            "inner dimensions",
            format!("{:?} x {:?} (transpose_b={transpose_b})", a.shape(), b.shape()),
        ));
    }
    let (av, bv) = (a.value().clone(), b.value().clone());
    let mut out = vec![T::zero(); g * n * m];
    out.par_chunks_mut(n * m).enumerate().for_each(|(gi, c)| {
        matmul(&av.data()[gi * n * k..][..n * k], &bv.data()[gi * k * m..][..k * m], n, k, m, false, transpose_b, c);
    });
    let y = Tensor::from_parts(vec![g, n, m], out);
    Ok(a.tape().record(y, &[a, b], move |gy, needs| {
        let ga = needs[0].then(|| {
            let mut da = vec![T::zero(); g * n * k];
            da.par_chunks_mut(n * k).enumerate().for_each(|(gi, c)| {
                let gslice = &gy.data()[gi * n * m..][..n * m];
                let bslice = &bv.data()[gi * k * m..][..k * m];
                // dA = G · op(B)ᵀ
                matmul(gslice, bslice, n, m, k, false, !transpose_b, c);
            });
            Tensor::from_parts(vec![g, n, k], da)
        });
        let gb = needs[1].then(|| {
            let mut db = vec![T::zero(); g * k * m];
            db.par_chunks_mut(k * m).enumerate().for_each(|(gi, c)| {
                let gslice = &gy.data()[gi * n * m..][..n * m];
                let aslice = &av.data()[gi * n * k..][..n * k];
                if transpose_b {
                    // B is m×k: dB = Gᵀ · A
                    matmul(gslice, aslice, m, n, k, true, false, c);
                } else {
                    // dB = Aᵀ · G
                    matmul(aslice, gslice, k, n, m, true, false, c);
                }
            });
            Tensor::from_parts(bv.shape().to_vec(), db)
        });
        vec![ga, gb]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn hand_arithmetic() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = tape.constant(Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::new(&[1], vec![0.5]).unwrap());
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().value().data(), &[3.5]);
    }

    #[test]
    fn identity_weight() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_fn(&[3, 70, 4], |i| i as f64 * 0.25).unwrap());
        let w = tape.constant(Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 }).unwrap());
        let b = tape.constant(Tensor::zeros(&[4]).unwrap());
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().value(), x.value());
    }

    #[test]
    fn bmm_transpose_agrees() {
        let tape = Tape::<f64>::no_grad();
        let a = tape.constant(Tensor::from_fn(&[2, 3, 4], |i| (i % 7) as f64).unwrap());
        let b = tape.constant(Tensor::from_fn(&[2, 4, 5], |i| (i % 5) as f64 - 2.0).unwrap());
        let bt = crate::ops::permute(&b, &[0, 2, 1]).unwrap();
        let c1 = bmm(&a, &b, false).unwrap();
        let c2 = bmm(&a, &bt, true).unwrap();
        assert_eq!(c1.value(), c2.value());
        assert_eq!(c1.shape(), &[2, 3, 5]);
        assert!(bmm(&a, &a, false).is_err());
    }
}
