//! Finite-difference gradient oracle and the per-kernel verification suite.
//!
//! Each check evaluates `L = Σ r ⊙ op(inputs)` for a fixed random `r`,
//! differentiates it with the tape, and compares every input gradient with
//! central differences in `f64`. The relative error of one element is
//! `|a − n| / max(|a|, |n|, floor)`, where `floor` is `FLOOR_FRACTION` of the
//! largest numeric gradient magnitude in the same check; this keeps elements
//! whose true gradient is near zero from dominating with truncation noise.
//!
//! Composite blocks contain leaky ReLU and `|·|`, whose kinks a step of `h`
//! can straddle; the central difference there measures the kink, not the
//! derivative. Subsampled checks therefore also evaluate the difference at
//! `h/2` and exclude elements where the two disagree by more than
//! `SMOOTHNESS_TOL` (a smooth function agrees to `O(h²)`). Excluded elements
//! are counted, and a check with more than `MAX_KINK_FRACTION` of them fails.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::ops::{self, Conv2dOptions, Padding};
use crate::tensor::Tensor;
use crate::Error;

/// Central-difference step used by every check.
pub const STEP: f64 = 1e-4;
/// Per-kernel pass threshold on the maximum relative error.
pub const OP_THRESHOLD: f64 = 1e-4;
/// End-to-end pass threshold.
pub const MODEL_THRESHOLD: f64 = 1e-3;
pub const FLOOR_FRACTION: f64 = 1e-3;
pub const SMOOTHNESS_TOL: f64 = 1e-5;
pub const MAX_KINK_FRACTION: f64 = 0.1;

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element.
pub fn finite_difference_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Tensor<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = orig - h;
        let down = f(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Maximum relative error over paired gradient values, floored at
/// `FLOOR_FRACTION · max |numeric|`.
pub fn max_relative_error(pairs: &[(f64, f64)]) -> f64 {
    let scale = pairs.iter().fold(0.0f64, |m, &(_, n)| m.max(n.abs()));
    let floor = (FLOOR_FRACTION * scale).max(1e-12);
    pairs
        .iter()
        .map(|&(a, n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

type OpFn = Box<dyn for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

/// One random instance of a kernel or block under test.
pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    pub op: OpFn,
    /// Check only this many randomly chosen elements instead of all.
    pub subsample: Option<usize>,
    /// Inputs before this index are held fixed.
    pub first_checked: usize,
    pub threshold: f64,
}

impl Case {
    pub fn new(inputs: Vec<Tensor<f64>>, op: impl for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>> + 'static) -> Self {
        Case {
            inputs,
            op: Box::new(op),
            subsample: None,
            first_checked: 0,
            threshold: OP_THRESHOLD,
        }
    }

    pub fn subsampled(mut self, n: usize) -> Self {
        self.subsample = Some(n);
        self
    }

    pub fn holding_fixed(mut self, leading_inputs: usize) -> Self {
        self.first_checked = leading_inputs;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    fn weighted_loss(&self, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = (self.op)(&vars)?;
        Ok(out
            .value()
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum())
    }

    fn numeric(&self, input: usize, elem: usize, weights: &Tensor<f64>, h: f64) -> Result<f64> {
        let mut inputs = self.inputs.clone();
        let mut probe = inputs[input].to_vec();
        let orig = probe[elem];
        let shape = inputs[input].shape().to_vec();
        probe[elem] = orig + h;
        inputs[input] = Tensor::from_parts(shape.clone(), probe.clone());
        let up = self.weighted_loss(&inputs, weights)?;
        probe[elem] = orig - h;
        inputs[input] = Tensor::from_parts(shape, probe);
        let down = self.weighted_loss(&inputs, weights)?;
        Ok((up - down) / (2.0 * h))
    }

    /// Maximum relative error over the checked inputs of this case.
    pub fn max_error(&self, seed: u64) -> Result<f64> {
        Ok(self.evaluate(seed)?.max_rel_err)
    }

    pub fn evaluate(&self, seed: u64) -> Result<Outcome> {
        let tape = Tape::new();
        let vars: Vec<_> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i < self.first_checked {
                    tape.constant(t.clone())
                } else {
                    tape.var(t.clone())
                }
            })
            .collect();
        let out = (self.op)(&vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let weights = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0))?;
        let loss = ops::sum(&ops::mul(&out, &tape.constant(weights.clone()))?);
        let grads = tape.backward(&loss)?;
        let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();

        match self.subsample {
            None => {
                let mut worst = 0.0f64;
                for i in self.first_checked..self.inputs.len() {
                    let numeric = finite_difference_grad(
                        |probe| {
                            let mut inputs = self.inputs.clone();
                            inputs[i] = probe.clone();
                            self.weighted_loss(&inputs, &weights).expect("forward succeeded once")
                        },
                        &self.inputs[i],
                        STEP,
                    );
                    let pairs: Vec<_> = analytic[i].data().iter().copied().zip(numeric.data().iter().copied()).collect();
                    worst = worst.max(max_relative_error(&pairs));
                }
                Ok(Outcome {
                    max_rel_err: worst,
                    checked: analytic[self.first_checked..].iter().map(Tensor::numel).sum(),
                    kinks: 0,
                })
            }
            Some(n) => {
                let pool: Vec<(usize, usize)> = (self.first_checked..self.inputs.len())
                    .flat_map(|i| (0..self.inputs[i].numel()).map(move |e| (i, e)))
                    .collect();
                let picks = rand::seq::index::sample(&mut rng, pool.len(), n.min(pool.len()));
                let mut probes = Vec::with_capacity(picks.len());
                for k in picks.iter() {
                    let (i, e) = pool[k];
                    let full = self.numeric(i, e, &weights, STEP)?;
                    let half = self.numeric(i, e, &weights, STEP / 2.0)?;
                    probes.push((analytic[i].data()[e], full, half));
                }
                let floor = FLOOR_FRACTION * probes.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
                let smooth = |&&(_, full, half): &&(f64, f64, f64)| {
                    (full - half).abs() <= SMOOTHNESS_TOL * full.abs().max(half.abs()).max(floor)
                };
                let pairs: Vec<(f64, f64)> = probes.iter().filter(smooth).map(|p| (p.0, p.1)).collect();
                let kinks = probes.len() - pairs.len();
                Ok(Outcome {
                    max_rel_err: max_relative_error(&pairs),
                    checked: pairs.len(),
                    kinks,
                })
            }
        }
    }
}

/// Result of one checked instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub max_rel_err: f64,
    /// Elements compared against finite differences.
    pub checked: usize,
    /// Sampled elements excluded as non-smooth at the step scale.
    pub kinks: usize,
}

/// Outcome of checking one kernel over several seeds.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub seeds: usize,
    pub checked: usize,
    pub kinks: usize,
    pub seconds: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite()
            && self.max_rel_err <= self.threshold
            && (self.kinks as f64) <= MAX_KINK_FRACTION * (self.checked + self.kinks) as f64
    }
}

/// Kernels covered by [`op_case`].
pub const OP_NAMES: &[&str] = &[
    "conv2d",
    "conv2d_dilated",
    "conv2d_strided",
    "deform_conv2d",
    "layer_norm",
    "softmax",
    "linear",
    "bmm",
    "bmm_transposed",
    "leaky_relu",
    "sigmoid",
    "gelu",
    "abs",
    "mu_law",
    "global_avg_pool",
    "add",
    "sub",
    "mul",
    "scale",
    "mul_channel",
    "concat",
    "gather",
    "gather_rows",
    "mean",
];

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).expect("valid shape")
}

/// Values bounded away from zero, for kernels with a kink at the origin.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .expect("valid shape")
}

/// Offsets whose sampling positions stay away from integer grid lines, where
/// bilinear interpolation is not differentiable.
fn fractional_offsets(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-2i32..2) as f64 + rng.random_range(0.05..0.95)).expect("valid shape")
}

/// A random instance of the named kernel.
pub fn op_case(name: &str, seed: u64) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let case = match name {
        "conv2d" | "conv2d_dilated" | "conv2d_strided" => {
            let opts = match name {
                "conv2d" => Conv2dOptions::default(),
                "conv2d_dilated" => Conv2dOptions::dilated(2),
                _ => Conv2dOptions {
                    stride: 2,
                    dilation: 1,
                    padding: Padding::Valid,
                },
            };
            let inputs = vec![
                uniform(r, &[2, 6, 5, 2], -1.0, 1.0),
                uniform(r, &[3, 3, 2, 3], -1.0, 1.0),
                uniform(r, &[3], -1.0, 1.0),
            ];
            Case::new(inputs, move |v| ops::conv2d(&v[0], &v[1], Some(&v[2]), opts))
        }
        "deform_conv2d" => {
            let inputs = vec![
                uniform(r, &[1, 5, 4, 2], -1.0, 1.0),
                uniform(r, &[3, 3, 2, 2], -1.0, 1.0),
                uniform(r, &[2], -1.0, 1.0),
                fractional_offsets(r, &[1, 5, 4, 18]),
            ];
            Case::new(inputs, |v| ops::deform_conv2d(&v[0], &v[1], Some(&v[2]), &v[3]))
        }
        "layer_norm" => {
            let inputs = vec![
                uniform(r, &[4, 6], -2.0, 2.0),
                uniform(r, &[6], 0.5, 1.5),
                uniform(r, &[6], -0.5, 0.5),
            ];
            Case::new(inputs, |v| ops::layer_norm(&v[0], &v[1], &v[2], ops::LN_EPS))
        }
        "softmax" => Case::new(vec![uniform(r, &[3, 5], -3.0, 3.0)], |v| Ok(ops::softmax(&v[0]))),
        "linear" => {
            let inputs = vec![
                uniform(r, &[2, 3, 4], -1.0, 1.0),
                uniform(r, &[4, 5], -1.0, 1.0),
                uniform(r, &[5], -1.0, 1.0),
            ];
            Case::new(inputs, |v| ops::linear(&v[0], &v[1], Some(&v[2])))
        }
        "bmm" => Case::new(
            vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2, 4, 5], -1.0, 1.0)],
            |v| ops::bmm(&v[0], &v[1], false),
        ),
        "bmm_transposed" => Case::new(
            vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2, 5, 4], -1.0, 1.0)],
            |v| ops::bmm(&v[0], &v[1], true),
        ),
        "leaky_relu" => Case::new(vec![away_from_zero(r, &[3, 7])], |v| Ok(ops::leaky_relu(&v[0]))),
        "sigmoid" => Case::new(vec![uniform(r, &[3, 7], -4.0, 4.0)], |v| Ok(ops::sigmoid(&v[0]))),
        "gelu" => Case::new(vec![uniform(r, &[3, 7], -3.0, 3.0)], |v| Ok(ops::gelu(&v[0]))),
        "abs" => Case::new(vec![away_from_zero(r, &[3, 7])], |v| Ok(ops::abs(&v[0]))),
        "mu_law" => Case::new(vec![uniform(r, &[4, 5], 0.05, 0.95)], |v| Ok(ops::mu_law(&v[0], 5000.0))),
        "global_avg_pool" => Case::new(vec![uniform(r, &[2, 3, 4, 3], -1.0, 1.0)], |v| ops::global_avg_pool(&v[0])),
        "add" | "sub" | "mul" => {
            let inputs = vec![uniform(r, &[2, 3, 3], -1.0, 1.0), uniform(r, &[2, 3, 3], -1.0, 1.0)];
            match name {
                "add" => Case::new(inputs, |v| ops::add(&v[0], &v[1])),
                "sub" => Case::new(inputs, |v| ops::sub(&v[0], &v[1])),
                _ => Case::new(inputs, |v| ops::mul(&v[0], &v[1])),
            }
        }
        "scale" => Case::new(vec![uniform(r, &[5], -1.0, 1.0)], |v| Ok(ops::scale(&v[0], -0.75))),
        "mul_channel" => Case::new(
            vec![uniform(r, &[2, 3, 2, 4], -1.0, 1.0), uniform(r, &[2, 4], 0.0, 1.0)],
            |v| ops::mul_channel(&v[0], &v[1]),
        ),
        "concat" => Case::new(
            vec![uniform(r, &[2, 2, 3], -1.0, 1.0), uniform(r, &[2, 2, 5], -1.0, 1.0)],
            |v| ops::concat_last(&[&v[0], &v[1]]),
        ),
        "gather" => {
            let index: Arc<Vec<usize>> = Arc::new((0..30).map(|_| r.random_range(0..12)).collect());
            Case::new(vec![uniform(r, &[3, 4], -1.0, 1.0)], move |v| ops::gather(&v[0], Arc::clone(&index), &[5, 6]))
        }
        "gather_rows" => {
            let index: Arc<Vec<usize>> = Arc::new((0..6).map(|_| r.random_range(0..4)).collect());
            Case::new(vec![uniform(r, &[2, 2, 3], -1.0, 1.0)], move |v| ops::gather_rows(&v[0], Arc::clone(&index), &[2, 3]))
        }
        "mean" => Case::new(vec![uniform(r, &[3, 4], -1.0, 1.0)], |v| Ok(ops::mean(&v[0]))),
        other => match crate::model::gradcheck::case(other, seed)? {
            Some(case) => case,
            None => return Err(Error::Config(format!("unknown gradient-check target '{other}'"))),
        },
    };
    Ok(case)
}

/// Checks one named kernel over `seeds` random instances starting at `seed`.
pub fn check(name: &str, seed: u64, seeds: usize) -> Result<CheckReport> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut threshold = OP_THRESHOLD;
    let (mut checked, mut kinks) = (0, 0);
    for s in 0..seeds as u64 {
        let case = op_case(name, seed.wrapping_add(s))?;
        threshold = case.threshold;
        let o = case.evaluate(seed.wrapping_add(s))?;
        worst = worst.max(o.max_rel_err);
        checked += o.checked;
        kinks += o.kinks;
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_err: worst,
        threshold,
        seeds,
        checked,
        kinks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_identity_sum_is_ones() {
        let x = Tensor::from_fn(&[4], |i| i as f64).unwrap();
        let g = finite_difference_grad(|t| t.sum(), &x, STEP);
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn fd_of_square_at_three() {
        let x = Tensor::scalar(3.0);
        let g = finite_difference_grad(|t| t.data()[0] * t.data()[0], &x, STEP);
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-3), 0.0);
        assert!((relative_error(1e-9, 0.0, 1e-3) - 1e-6).abs() < 1e-18);
        assert!((relative_error(2.0, 1.0, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn straddled_kink_is_screened_not_scored() {
        let x = Tensor::new(&[4], vec![5e-5, 0.3, -0.7, 1.1]).unwrap();
        let full = Case::new(vec![x.clone()], |v| Ok(ops::abs(&v[0]))).evaluate(1).unwrap();
        assert!(full.max_rel_err > 0.1);
        let sampled = Case::new(vec![x], |v| Ok(ops::abs(&v[0]))).subsampled(4).evaluate(1).unwrap();
        assert_eq!((sampled.kinks, sampled.checked), (1, 3));
        assert!(sampled.max_rel_err < 1e-9);
    }

    #[test]
    fn report_fails_when_kinks_dominate() {
        let r = CheckReport {
            name: "x".into(),
            max_rel_err: 0.0,
            threshold: 1e-4,
            seeds: 1,
            checked: 8,
            kinks: 2,
            seconds: 0.0,
        };
        assert!(!r.passed());
        assert!(CheckReport { kinks: 0, ..r }.passed());
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(op_case("not_an_op", 0).is_err());
    }
}
