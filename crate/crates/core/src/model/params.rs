//! Flat parameter storage and the layer descriptors that index into it.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{self, Conv2dOptions};
use crate::tensor::{DType, Real, Tensor};

use super::config::HdtConfig;

/// Standard deviation of the truncated normal used for projections.
pub const PROJ_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given σ, resampled outside ±2σ.
    TruncNormal(f64),
    /// Uniform in `±1/√fan_in`.
    FanIn(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter specs while an architecture is being laid out.
#[derive(Debug, Default)]
pub struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
        self.specs.len() - 1
    }

    pub fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, opts: Conv2dOptions) -> Conv {
        Conv {
            w: self.add(format!("{name}.weight"), &[k, k, cin, cout], Init::FanIn(k * k * cin)),
            b: self.add(format!("{name}.bias"), &[cout], Init::Zeros),
            opts,
        }
    }

    /// A conv whose weight and bias start at zero.
    pub fn zero_conv(&mut self, name: &str, k: usize, cin: usize, cout: usize) -> Conv {
        Conv {
            w: self.add(format!("{name}.weight"), &[k, k, cin, cout], Init::Zeros),
            b: self.add(format!("{name}.bias"), &[cout], Init::Zeros),
            opts: Conv2dOptions::default(),
        }
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        Linear {
            w: self.add(format!("{name}.weight"), &[din, dout], Init::TruncNormal(PROJ_STD)),
            b: self.add(format!("{name}.bias"), &[dout], Init::Zeros),
        }
    }

    pub fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{name}.gamma"), &[d], Init::Ones),
            b: self.add(format!("{name}.beta"), &[d], Init::Zeros),
        }
    }

    pub fn finish<T: Real>(self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = self.specs.iter().map(|s| init_tensor(s, &mut rng)).collect();
        ParamStore {
            specs: self.specs,
            tensors,
        }
    }
}

fn init_tensor<T: Real>(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = spec.numel();
    let data: Vec<T> = match spec.init {
        Init::Zeros => vec![T::zero(); n],
        Init::Ones => vec![T::one(); n],
        Init::TruncNormal(std) => {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n)
                .map(|_| loop {
                    let v: f64 = normal.sample(rng);
                    if v.abs() <= 2.0 * std {
                        break T::lit(v);
                    }
                })
                .collect()
        }
        Init::FanIn(fan_in) => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
        }
    };
    Tensor::from_parts(spec.shape.clone(), data)
}

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn name(&self, i: usize) -> &str {
        &self.specs[i].name
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn set(&mut self, i: usize, t: Tensor<T>) -> Result<()> {
        if t.shape() != self.specs[i].shape.as_slice() {
            return Err(Error::shape(
                "ParamStore::set",
                self.specs[i].name.clone(),
                format!("expected {:?}, got {:?}", self.specs[i].shape, t.shape()),
            ));
        }
        self.tensors[i] = t;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Binds every parameter to `tape`: tracked leaves on a recording tape,
    /// constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.tensors
            .iter()
            .map(|t| {
                if tape.is_recording() {
                    tape.var(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pub opts: Conv2dOptions,
}

impl Conv {
    pub fn apply<'t, T: Real>(&self, p: &[Var<'t, T>], x: &Var<'t, T>) -> Result<Var<'t, T>> {
        ops::conv2d(x, &p[self.w], Some(&p[self.b]), self.opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn apply<'t, T: Real>(&self, p: &[Var<'t, T>], x: &Var<'t, T>) -> Result<Var<'t, T>> {
        ops::linear(x, &p[self.w], Some(&p[self.b]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub g: usize,
    pub b: usize,
}

impl Norm {
    pub fn apply<'t, T: Real>(&self, p: &[Var<'t, T>], x: &Var<'t, T>) -> Result<Var<'t, T>> {
        ops::layer_norm(x, &p[self.g], &p[self.b], T::lit(ops::LN_EPS))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

/// Parameter names and shapes plus the code-path flags that change behaviour
/// without changing the parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub head_path: &'static str,
    pub local_path: &'static str,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new<T: Real>(cfg: &HdtConfig, store: &ParamStore<T>) -> Self {
        Manifest {
            head_path: if cfg.sar { "sar" } else { "plain" },
            local_path: if cfg.deformable { "deformable" } else { "standard" },
            entries: store
                .specs()
                .iter()
                .map(|s| ManifestEntry {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    dtype: T::DTYPE,
                })
                .collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# head.path {}", self.head_path);
        let _ = writeln!(out, "# local.path {}", self.local_path);
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            let n: usize = e.shape.iter().product();
            let _ = writeln!(out, "{}\t{}\t{}\t{n}", e.name, dims.join("x"), e.dtype.name());
        }
        let _ = writeln!(out, "total\t{}", self.total());
        out
    }

    /// First structural difference from `other` (dtype is not compared).
    pub fn diff(&self, other: &Manifest) -> Option<String> {
        if self.head_path != other.head_path {
            return Some(format!("head path: {} vs {}", self.head_path, other.head_path));
        }
        if self.local_path != other.local_path {
            return Some(format!("local path: {} vs {}", self.local_path, other.local_path));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name {
                return Some(format!("parameter name: {} vs {}", a.name, b.name));
            }
            if a.shape != b.shape {
                return Some(format!("{}: shape {:?} vs {:?}", a.name, a.shape, b.shape));
            }
        }
        match self.entries.len().cmp(&other.entries.len()) {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(format!("extra parameter {}", self.entries[other.entries.len()].name)),
            std::cmp::Ordering::Less => Some(format!("missing parameter {}", other.entries[self.entries.len()].name)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_kinds() {
        let mut b = Builder::default();
        let c = b.conv("c", 3, 4, 5, Conv2dOptions::default());
        let l = b.linear("l", 10, 10);
        let n = b.norm("n", 7);
        let z = b.zero_conv("z", 3, 2, 18);
        let store: ParamStore<f64> = b.finish(1);
        let bound = 1.0 / 36f64.sqrt();
        assert!(store.get(c.w).data().iter().all(|v| v.abs() <= bound));
        assert!(store.get(c.b).data().iter().all(|&v| v == 0.0));
        assert!(store.get(l.w).data().iter().all(|v| v.abs() <= 2.0 * PROJ_STD));
        assert!(store.get(l.w).data().iter().any(|&v| v != 0.0));
        assert!(store.get(n.g).data().iter().all(|&v| v == 1.0));
        assert!(store.get(z.w).data().iter().all(|&v| v == 0.0));
        assert_eq!(store.total(), 36 * 5 + 5 + 110 + 14 + 18 * 18 + 18);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let make = |seed| {
            let mut b = Builder::default();
            b.linear("l", 4, 4);
            b.finish::<f32>(seed)
        };
        assert_eq!(make(3), make(3));
        assert_ne!(make(3), make(4));
    }
}
