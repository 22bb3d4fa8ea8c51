use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::hdr::mu_law_tensor;
use crate::ops;
use crate::tensor::{Real, Tensor};

/// `mean |T(gt) − T(pred)|` with `T` the μ-law tonemap.
pub fn l1_tonemapped_loss<'t, T: Real>(pred: &Var<'t, T>, gt: &Var<'t, T>, mu: f64) -> Result<Var<'t, T>> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            "l1_tonemapped_loss",
            "shape",
            format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape()),
        ));
    }
    if !(mu > 0.0) {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    let diff = ops::sub(&ops::mu_law(gt, T::lit(mu)), &ops::mu_law(pred, T::lit(mu)))?;
    Ok(ops::mean(&ops::abs(&diff)))
}

/// Value-only form of [`l1_tonemapped_loss`], accumulated in `f64`.
pub fn l1_tonemapped<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, mu: f64) -> Result<f64> {
    pred.expect_same_shape("l1_tonemapped", gt)?;
    let a = mu_law_tensor(pred, mu)?;
    let b = mu_law_tensor(gt, mu)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .sum();
    Ok(sum / a.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn endpoints_and_symmetry() {
        let tape = Tape::<f64>::no_grad();
        let zeros = tape.constant(Tensor::zeros(&[1, 2, 2, 3]).unwrap());
        let ones = tape.constant(Tensor::ones(&[1, 2, 2, 3]).unwrap());
        assert_eq!(l1_tonemapped_loss(&zeros, &ones, 5000.0).unwrap().value().data(), &[1.0]);
        assert_eq!(l1_tonemapped_loss(&ones, &ones, 5000.0).unwrap().value().data(), &[0.0]);
        let a = tape.constant(Tensor::from_fn(&[6], |i| i as f64 / 7.0).unwrap());
        let b = tape.constant(Tensor::from_fn(&[6], |i| (6 - i) as f64 / 9.0).unwrap());
        let ab = l1_tonemapped_loss(&a, &b, 5000.0).unwrap().value().data()[0];
        let ba = l1_tonemapped_loss(&b, &a, 5000.0).unwrap().value().data()[0];
        assert_eq!(ab, ba);
        assert!((l1_tonemapped(a.value(), b.value(), 5000.0).unwrap() - ab).abs() < 1e-15);
        assert!(l1_tonemapped_loss(&a, &zeros, 5000.0).is_err());
    }
}
