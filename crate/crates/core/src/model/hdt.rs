//! The full network: head, embedding conv, `M` groups of `N` DT blocks with a
//! conv and skip per group, a dilated conv, two global residuals on the
//! embedded features, and a sigmoid output conv.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::hdr::{build_inputs, HdrImage, SampleTriplet};
use crate::ops::{self, Conv2dOptions};
use crate::tensor::{Real, Tensor};

use super::config::HdtConfig;
use super::dt::{dt_forward, DtLayers};
use super::head::HeadLayers;
use super::params::{Builder, Conv, Manifest, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupLayers {
    pub blocks: Vec<DtLayers>,
    pub conv: Conv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub head: HeadLayers,
    pub embed: Conv,
    pub groups: Vec<GroupLayers>,
    pub dilated: Conv,
    pub mid: Conv,
    pub out: Conv,
}

impl Architecture {
    pub fn build(cfg: &HdtConfig) -> Result<(Self, Builder)> {
        cfg.validate()?;
        let mut b = Builder::default();
        let (c, d) = (cfg.channels, cfg.embed);
        let o = Conv2dOptions::default();
        let head = HeadLayers::build(&mut b, c, cfg.sar);
        let embed = b.conv("body.embed", 3, 4 * c, d, o);
        let groups = (0..cfg.groups)
            .map(|g| GroupLayers {
                blocks: (0..cfg.dts_per_group)
                    .map(|i| DtLayers::build(&mut b, &format!("body.group{g}.dt{i}"), cfg, cfg.shift_for(i)))
                    .collect(),
                conv: b.conv(&format!("body.group{g}.conv"), 3, d, d, o),
            })
            .collect();
        let dilated = b.conv("body.dilated", 3, d, d, Conv2dOptions::dilated(cfg.dilation));
        let mid = b.conv("body.mid", 3, d, d, o);
        let out = b.conv("body.out", 3, d, 3, o);
        Ok((
            Architecture {
                head,
                embed,
                groups,
                dilated,
                mid,
                out,
            },
            b,
        ))
    }
}

/// `f_init` (`B×H×W×4C`) to `I_H` (`B×H×W×3`, in `(0, 1)`).
pub fn hdt_forward<'t, T: Real>(p: &[Var<'t, T>], arch: &Architecture, f_init: &Var<'t, T>) -> Result<Var<'t, T>> {
    let x0 = arch.embed.apply(p, f_init)?;
    let mut h = x0.clone();
    for group in &arch.groups {
        let skip = h.clone();
        for dt in &group.blocks {
            h = dt_forward(p, dt, &h)?;
        }
        h = ops::add(&group.conv.apply(p, &h)?, &skip)?;
    }
    h = ops::add(&arch.dilated.apply(p, &h)?, &x0)?;
    h = ops::add(&arch.mid.apply(p, &h)?, &x0)?;
    Ok(ops::sigmoid(&arch.out.apply(p, &h)?))
}

/// Architecture, configuration and parameter values.
#[derive(Debug, Clone)]
pub struct Model<T> {
    cfg: HdtConfig,
    arch: Architecture,
    params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Freshly initialised parameters from `seed`.
    pub fn new(cfg: HdtConfig, seed: u64) -> Result<Self> {
        let (arch, b) = Architecture::build(&cfg)?;
        Ok(Model {
            cfg,
            arch,
            params: b.finish(seed),
        })
    }

    /// Wraps existing parameters, which must match the configuration's
    /// manifest.
    pub fn from_params(cfg: HdtConfig, params: ParamStore<T>) -> Result<Self> {
        let fresh = Model::<T>::new(cfg, 0)?;
        if let Some(diff) = fresh.manifest().diff(&Manifest::new(&fresh.cfg, &params)) {
            return Err(Error::ManifestMismatch(diff));
        }
        Ok(Model { params, ..fresh })
    }

    pub fn config(&self) -> &HdtConfig {
        &self.cfg
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn manifest(&self) -> Manifest {
        Manifest::new(&self.cfg, &self.params)
    }

    pub fn param_count(&self) -> usize {
        self.params.total()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Differentiable forward pass on bound parameters `p` (see
    /// [`ParamStore::bind`]).
    pub fn forward<'t>(&self, p: &[Var<'t, T>], inputs: [&Var<'t, T>; 3]) -> Result<Var<'t, T>> {
        let f_init = self.arch.head.forward(p, inputs)?;
        hdt_forward(p, &self.arch, &f_init)
    }

    /// Forward pass without recording gradients.
    pub fn predict(&self, inputs: [&Tensor<T>; 3]) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let p = self.params.bind(&tape);
        let xs = inputs.map(|t| tape.constant(t.clone()));
        Ok(self.forward(&p, [&xs[0], &xs[1], &xs[2]])?.into_value())
    }
}

/// Fuses one triplet into an HDR image in normalised radiance.
pub fn model_forward<T: Real>(model: &Model<T>, s: &SampleTriplet, gamma: f64) -> Result<HdrImage> {
    let [a, b, c] = build_inputs::<T>(s, gamma)?;
    HdrImage::from_tensor(&model.predict([&a, &b, &c])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdr::LdrImage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
    }

    #[test]
    fn paper_budget() {
        let m = Model::<f32>::new(HdtConfig::paper(), 0).unwrap();
        let n = m.param_count();
        assert!((1_012_500..=1_687_500).contains(&n), "{n}");
    }

    #[test]
    fn tiny_shapes_and_range() {
        let m = Model::<f64>::new(HdtConfig::tiny(), 1).unwrap();
        let xs: Vec<_> = (0..3).map(|i| rand_tensor(i, &[1, 32, 32, 6], 0.0, 1.0)).collect();
        let y = m.predict([&xs[0], &xs[1], &xs[2]]).unwrap();
        assert_eq!(y.shape(), &[1, 32, 32, 3]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let again = m.predict([&xs[0], &xs[1], &xs[2]]).unwrap();
        assert_eq!(y, again);
    }

    #[test]
    fn zeroed_blocks_leave_the_skeleton() {
        let cfg = HdtConfig {
            groups: 2,
            ..HdtConfig::tiny()
        };
        let mut m = Model::<f64>::new(cfg, 2).unwrap();
        for i in 0..m.params.len() {
            if m.params.name(i).contains(".dt") {
                let z = Tensor::zeros(m.params.get(i).shape()).unwrap();
                m.params.set(i, z).unwrap();
            }
        }
        let tape = Tape::no_grad();
        let p = m.params.bind(&tape);
        let f = tape.constant(rand_tensor(9, &[1, 6, 7, 32], -1.0, 1.0));
        let got = hdt_forward(&p, &m.arch, &f).unwrap();

        let a = &m.arch;
        let x0 = a.embed.apply(&p, &f).unwrap();
        let mut h = x0.clone();
        for g in &a.groups {
            h = ops::add(&g.conv.apply(&p, &h).unwrap(), &h).unwrap();
        }
        h = ops::add(&a.dilated.apply(&p, &h).unwrap(), &x0).unwrap();
        h = ops::add(&a.mid.apply(&p, &h).unwrap(), &x0).unwrap();
        let expect = ops::sigmoid(&a.out.apply(&p, &h).unwrap());
        assert_eq!(got.value(), expect.value());
    }

    #[test]
    fn from_params_checks_manifest() {
        let m = Model::<f32>::new(HdtConfig::tiny(), 0).unwrap();
        assert!(Model::from_params(HdtConfig::tiny(), m.params().clone()).is_ok());
        let other = HdtConfig {
            embed: 20,
            heads: 2,
            ..HdtConfig::tiny()
        };
        assert!(matches!(
            Model::from_params(other, m.params().clone()),
            Err(Error::ManifestMismatch(_))
        ));
    }

    #[test]
    fn fuses_a_triplet() {
        let m = Model::<f32>::new(HdtConfig::tiny(), 3).unwrap();
        let img = |t| LdrImage::new(9, 10, (0..270).map(|i| (i % 17) as f32 / 16.0).collect(), t).unwrap();
        let s = SampleTriplet::new("x", [img(0.25), img(1.0), img(4.0)], None).unwrap();
        let out = model_forward(&m, &s, 2.2).unwrap();
        assert_eq!((out.height(), out.width()), (9, 10));
    }
}
