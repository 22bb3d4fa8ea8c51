use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::{bhwc, Real, Tensor};
use crate::Error;

/// Negative-side slope of the leaky ReLU used across the network.
pub const LEAKY_SLOPE: f64 = 0.01;

fn unary<'t, T: Real>(
    x: &Var<'t, T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Var<'t, T> {
    let xv = x.value().clone();
    let y = xv.map(f);
    let yv = y.clone();
    x.tape().record(y, &[x], move |g, _| {
        let data = g
            .data()
            .iter()
            .zip(xv.data().iter().zip(yv.data()))
            .map(|(&g, (&x, &y))| g * df(x, y))
            .collect();
        vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
    })
}

pub fn add<'t, T: Real>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    let y = a.value().zip_map(b.value(), |x, y| x + y)?;
    Ok(a.tape().record(y, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())]))
}

pub fn sub<'t, T: Real>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    let y = a.value().zip_map(b.value(), |x, y| x - y)?;
    Ok(a.tape().record(y, &[a, b], |g, needs| {
        vec![Some(g.clone()), needs[1].then(|| g.map(|v| -v))]
    }))
}

pub fn mul<'t, T: Real>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    let y = a.value().zip_map(b.value(), |x, y| x * y)?;
    let (av, bv) = (a.value().clone(), b.value().clone());
    Ok(a.tape().record(y, &[a, b], move |g, needs| {
        vec![
            needs[0].then(|| g.zip_map(&bv, |g, b| g * b).unwrap()),
            needs[1].then(|| g.zip_map(&av, |g, a| g * a).unwrap()),
        ]
    }))
}

pub fn scale<'t, T: Real>(x: &Var<'t, T>, s: T) -> Var<'t, T> {
    let y = x.value().map(|v| v * s);
    x.tape().record(y, &[x], move |g, _| vec![Some(g.map(|v| v * s))])
}

/// Gates a `B×H×W×C` image by a per-sample channel vector `B×C`.
pub fn mul_channel<'t, T: Real>(x: &Var<'t, T>, w: &Var<'t, T>) -> Result<Var<'t, T>> {
    let [b, h, wd, c] = bhwc("mul_channel", x.value())?;
    if w.shape() != [b, c] {
        return Err(Error::shape(
            "mul_channel",
            "gate",
            format!("expected [{b}, {c}], got {:?}", w.shape()),
        ));
    }
    let (xv, wv) = (x.value().clone(), w.value().clone());
    let hw = h * wd;
    let mut out = Vec::with_capacity(xv.numel());
    for bi in 0..b {
        let gate = &wv.data()[bi * c..(bi + 1) * c];
        for px in xv.data()[bi * hw * c..(bi + 1) * hw * c].chunks_exact(c) {
            out.extend(px.iter().zip(gate).map(|(&v, &g)| v * g));
        }
    }
    let y = Tensor::from_parts(xv.shape().to_vec(), out);
    Ok(x.tape().record(y, &[x, w], move |g, needs| {
        let gx = needs[0].then(|| {
            let mut dx = Vec::with_capacity(g.numel());
            for bi in 0..b {
                let gate = &wv.data()[bi * c..(bi + 1) * c];
                for px in g.data()[bi * hw * c..(bi + 1) * hw * c].chunks_exact(c) {
                    dx.extend(px.iter().zip(gate).map(|(&v, &g)| v * g));
                }
            }
            Tensor::from_parts(g.shape().to_vec(), dx)
        });
        let gw = needs[1].then(|| {
            let mut dw = vec![T::zero(); b * c];
            for bi in 0..b {
                let acc = &mut dw[bi * c..(bi + 1) * c];
                let rows = bi * hw * c..(bi + 1) * hw * c;
                for (gp, xp) in g.data()[rows.clone()]
                    .chunks_exact(c)
                    .zip(xv.data()[rows].chunks_exact(c))
                {
                    for ((a, &gv), &xv) in acc.iter_mut().zip(gp).zip(xp) {
                        *a += gv * xv;
                    }
                }
            }
            Tensor::from_parts(vec![b, c], dw)
        });
        vec![gx, gw]
    }))
}

pub fn leaky_relu<'t, T: Real>(x: &Var<'t, T>) -> Var<'t, T> {
    let slope = T::lit(LEAKY_SLOPE);
    unary(
        x,
        move |v| if v >= T::zero() { v } else { v * slope },
        move |x, _| if x >= T::zero() { T::one() } else { slope },
    )
}

pub fn sigmoid<'t, T: Real>(x: &Var<'t, T>) -> Var<'t, T> {
    unary(x, sigmoid_scalar, |_, y| y * (T::one() - y))
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// GELU, tanh approximation.
pub fn gelu<'t, T: Real>(x: &Var<'t, T>) -> Var<'t, T> {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let three = T::lit(3.0);
    unary(
        x,
        move |v| half * v * (T::one() + (k * (v + a * v * v * v)).tanh()),
        move |x, _| {
            let t = (k * (x + a * x * x * x)).tanh();
            half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * a * x * x)
        },
    )
}

pub fn abs<'t, T: Real>(x: &Var<'t, T>) -> Var<'t, T> {
    unary(
        x,
        |v| v.abs(),
        |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        },
    )
}

/// μ-law range compression `log(1 + μx) / log(1 + μ)` on inputs clamped to
/// `[0, 1]`. The clamp passes no gradient outside the unit interval.
pub fn mu_law<'t, T: Real>(x: &Var<'t, T>, mu: T) -> Var<'t, T> {
    let denom = mu.ln_1p();
    unary(
        x,
        move |v| (mu * v.max(T::zero()).min(T::one())).ln_1p() / denom,
        move |x, _| {
            if x < T::zero() || x > T::one() {
                T::zero()
            } else {
                mu / ((T::one() + mu * x) * denom)
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::new(&[data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_slope() {
        let tape = Tape::<f64>::no_grad();
        let y = leaky_relu(&tape.constant(v(&[-1.0, 0.0, 2.0])));
        assert_eq!(y.value().data(), &[-0.01, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_values_and_saturation() {
        let tape = Tape::<f64>::no_grad();
        let y = sigmoid(&tape.constant(v(&[0.0, 40.0, -40.0, 800.0, -800.0])));
        let d = y.value().data();
        assert_eq!(d[0], 0.5);
        assert!((d[1] - 1.0).abs() < 1e-6 && (d[2]).abs() < 1e-6);
        assert!(d.iter().all(|x| x.is_finite() && *x >= 0.0 && *x <= 1.0));
        let tape = Tape::<f32>::no_grad();
        let y = sigmoid(&tape.constant(Tensor::new(&[2], vec![40.0f32, -40.0]).unwrap()));
        assert!((y.value().data()[0] - 1.0).abs() < 1e-6 && y.value().data()[1] < 1e-6);
    }

    #[test]
    fn identity_laws() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(v(&[1.5, -2.0, 0.25]));
        let ones = tape.constant(Tensor::ones(&[3]).unwrap());
        let zeros = tape.constant(Tensor::zeros(&[3]).unwrap());
        assert_eq!(mul(&x, &ones).unwrap().value(), x.value());
        assert_eq!(add(&x, &zeros).unwrap().value(), x.value());
        assert!(add(&x, &tape.constant(Tensor::zeros(&[4]).unwrap())).is_err());
    }

    #[test]
    fn mu_law_clamps() {
        let tape = Tape::<f64>::no_grad();
        let y = mu_law(&tape.constant(v(&[-0.5, 0.0, 1.0, 3.0])), 5000.0);
        assert_eq!(y.value().data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn mul_channel_broadcasts() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64).unwrap());
        let w = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 2.0, 0.5]).unwrap());
        let y = mul_channel(&x, &w).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0, 2.0, 0.0, 8.0, 2.5, 12.0, 3.5]);
        assert!(mul_channel(&x, &tape.constant(Tensor::ones(&[2, 3]).unwrap())).is_err());
    }
}
