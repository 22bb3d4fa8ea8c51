use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape()).expect("valid shape")).collect();
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient is
/// non-finite; the error names the first offending parameter.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            "parameter count",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.get(i).shape() {
            return Err(Error::shape(
                "adam_step",
                params.name(i).to_string(),
                format!("gradient {:?} vs parameter {:?}", g.shape(), params.get(i).shape()),
            ));
        }
        if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of parameter '{}' at element {bad} is {}", params.name(i), g.data()[bad]),
            });
        }
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
    let bc1 = T::lit(1.0 - c.beta1.powi(t));
    let bc2 = T::lit(1.0 - c.beta2.powi(t));
    let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
    for (i, g) in grads.iter().enumerate() {
        let mut p = params.get(i).to_vec();
        let mut m = state.m[i].to_vec();
        let mut v = state.v[i].to_vec();
        for (((p, m), v), &g) in p.iter_mut().zip(&mut m).zip(&mut v).zip(g.data()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        let shape = g.shape();
        params.set(i, Tensor::new(shape, p)?)?;
        state.m[i] = Tensor::new(shape, m)?;
        state.v[i] = Tensor::new(shape, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{Builder, Init};

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut b = Builder::default();
        b.add("w", &[values.len()], Init::Zeros);
        let mut s = b.finish(0);
        s.set(0, Tensor::new(&[values.len()], values.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(&[1.0]);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &[Tensor::scalar(0.5)], &mut st).unwrap();
        assert!((p.get(0).data()[0] - (1.0 - 1e-4)).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = store(&[0.3]);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut st).unwrap();
        assert_eq!(p.get(0).data(), &[0.3]);
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut st).unwrap();
        let before = p.get(0).data()[0];
        let (m, v) = (st.m[0].data()[0], st.v[0].data()[0]);
        let mut p2 = p.clone();
        let mut st2 = st.clone();
        st2.config.lr = 0.0;
        adam_step(&mut p2, &[Tensor::scalar(0.0)], &mut st2).unwrap();
        assert_eq!(p2.get(0).data()[0], before);
        assert_eq!(st2.m[0].data()[0], 0.9 * m);
        assert_eq!(st2.v[0].data()[0], 0.999 * v);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = store(&[0.0, 1.0]);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let err = adam_step(&mut p, &[Tensor::new(&[2], vec![0.0, f64::NAN]).unwrap()], &mut st).unwrap_err();
        assert!(err.to_string().contains("'w'"), "{err}");
        assert_eq!(st.step, 0);
        assert_eq!(p.get(0).data(), &[0.0, 1.0]);
    }
}
