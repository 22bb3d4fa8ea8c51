use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::{Real, Tensor};
use crate::Error;

pub const LN_EPS: f64 = 1e-5;

/// Normalises each vector along the last axis to zero mean and unit variance,
/// then applies the per-channel affine `gamma · x̂ + beta`.
pub fn layer_norm<'t, T: Real>(
    x: &Var<'t, T>,
    gamma: &Var<'t, T>,
    beta: &Var<'t, T>,
    eps: T,
) -> Result<Var<'t, T>> {
    let c = x.value().last_dim();
    for (name, p) in [("gamma", gamma), ("beta", beta)] {
        if p.shape() != [c] {
            return Err(Error::shape(
                "layer_norm",
                name,
                format!("expected [{c}], got {:?}", p.shape()),
            ));
        }
    }
    let n = T::lit(c as f64);
    let rows = x.value().numel() / c;
    let mut xhat = Vec::with_capacity(rows * c);
    let mut inv_std = Vec::with_capacity(rows);
    for row in x.value().data().chunks_exact(c) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        xhat.extend(row.iter().map(|&v| (v - mean) * is));
    }
    let (gv, bv) = (gamma.value().clone(), beta.value().clone());
    let out: Vec<T> = xhat
        .chunks_exact(c)
        .flat_map(|row| {
            row.iter()
                .zip(gv.data().iter().zip(bv.data()))
                .map(|(&h, (&g, &b))| g * h + b)
                .collect::<Vec<_>>()
        })
        .collect();
    let shape = x.shape().to_vec();
    let y = Tensor::from_parts(shape.clone(), out);
    Ok(x.tape().record(y, &[x, gamma, beta], move |g, needs| {
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut dx = Vec::with_capacity(if needs[0] { rows * c } else { 0 });
        let mut dxhat = vec![T::zero(); c];
        for ((grow, hrow), &is) in g.data().chunks_exact(c).zip(xhat.chunks_exact(c)).zip(&inv_std) {
            for i in 0..c {
                dgamma[i] += grow[i] * hrow[i];
                dbeta[i] += grow[i];
                dxhat[i] = grow[i] * gv.data()[i];
            }
            if needs[0] {
                let m1 = dxhat.iter().copied().sum::<T>() / n;
                let m2 = dxhat.iter().zip(hrow).map(|(&d, &h)| d * h).sum::<T>() / n;
                dx.extend(dxhat.iter().zip(hrow).map(|(&d, &h)| is * (d - m1 - h * m2)));
            }
        }
        vec![
            needs[0].then(|| Tensor::from_parts(shape, dx)),
            needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
            needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
        ]
    }))
}

/// Softmax along the last axis with max subtraction.
pub fn softmax<'t, T: Real>(x: &Var<'t, T>) -> Var<'t, T> {
    let c = x.value().last_dim();
    let mut out = Vec::with_capacity(x.value().numel());
    for row in x.value().data().chunks_exact(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let total: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / total);
    }
    let y = Tensor::from_parts(x.shape().to_vec(), out);
    let yv = y.clone();
    x.tape().record(y, &[x], move |g, _| {
        let mut dx = Vec::with_capacity(g.numel());
        for (grow, yrow) in g.data().chunks_exact(c).zip(yv.data().chunks_exact(c)) {
            let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
            dx.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| yv * (gv - dot)));
        }
        vec![Some(Tensor::from_parts(g.shape().to_vec(), dx))]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn ln(x: &[f64]) -> Vec<f64> {
        let tape = Tape::<f64>::no_grad();
        let c = x.len();
        let y = layer_norm(
            &tape.constant(Tensor::new(&[c], x.to_vec()).unwrap()),
            &tape.constant(Tensor::ones(&[c]).unwrap()),
            &tape.constant(Tensor::zeros(&[c]).unwrap()),
            LN_EPS,
        )
        .unwrap();
        y.value().to_vec()
    }

    #[test]
    fn constant_vector_normalises_to_zero() {
        assert_eq!(ln(&[3.0; 5]), vec![0.0; 5]);
    }

    #[test]
    fn two_element_case() {
        let y = ln(&[1.0, 3.0]);
        let expect = 1.0 / (1.0f64 + LN_EPS).sqrt();
        assert!((y[0] + expect).abs() < 1e-12 && (y[1] - expect).abs() < 1e-12);
        assert!((y[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn softmax_small_cases() {
        let tape = Tape::<f64>::no_grad();
        let y = softmax(&tape.constant(Tensor::new(&[2], vec![0.0, 0.0]).unwrap()));
        assert_eq!(y.value().data(), &[0.5, 0.5]);
        let y = softmax(&tape.constant(Tensor::new(&[2], vec![3.0, 1003.0]).unwrap()));
        assert!(y.value().data()[0] < 1e-300 && (y.value().data()[1] - 1.0).abs() < 1e-15);
        assert!(y.value().all_finite());
    }

    #[test]
    fn param_shape_checked() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::ones(&[2, 3]).unwrap());
        let g = tape.constant(Tensor::ones(&[2]).unwrap());
        assert!(layer_norm(&x, &g, &g, LN_EPS).is_err());
    }
}
