//! The dual-branch transformer block. The global branch runs multi-head
//! self-attention inside (optionally shifted) windows followed by an MLP; the
//! local branch derives a per-channel gate from a conv/deformable-conv chain
//! and applies it to the normalised input. The two are summed.
//!
//! Blocks exchange features in image layout `B×H×W×D`; a token sequence
//! `B×(H·W)×D` is the same buffer read row by row.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::ops::{self, Conv2dOptions};
use crate::tensor::{bhwc, Real};

use super::config::HdtConfig;
use super::params::{Builder, Conv, Linear, Norm};
use super::window::{self, WindowGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsaLayers {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalLayers {
    pub ln1: Norm,
    pub msa: MsaLayers,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// A deformable conv with its offset predictor, or a plain conv when
/// `offset` is absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformLayer {
    pub conv: Conv,
    pub offset: Option<Conv>,
}

impl DeformLayer {
    pub fn apply<'t, T: Real>(&self, p: &[Var<'t, T>], x: &Var<'t, T>) -> Result<Var<'t, T>> {
        match &self.offset {
            Some(off) => {
                let offsets = off.apply(p, x)?;
                ops::deform_conv2d(x, &p[self.conv.w], Some(&p[self.conv.b]), &offsets)
            }
            None => self.conv.apply(p, x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalLayers {
    pub ln: Norm,
    pub conv1: Conv,
    pub conv2: Conv,
    pub deform: [DeformLayer; 2],
    pub fc: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtLayers {
    pub global: GlobalLayers,
    pub local: LocalLayers,
    pub window: usize,
    pub shift: usize,
}

impl DtLayers {
    pub fn build(b: &mut Builder, name: &str, cfg: &HdtConfig, shift: usize) -> Self {
        let d = cfg.embed;
        let hidden = cfg.mlp_hidden();
        let global = GlobalLayers {
            ln1: b.norm(&format!("{name}.global.ln1"), d),
            msa: MsaLayers {
                q: b.linear(&format!("{name}.global.attn.q"), d, d),
                k: b.linear(&format!("{name}.global.attn.k"), d, d),
                v: b.linear(&format!("{name}.global.attn.v"), d, d),
                o: b.linear(&format!("{name}.global.attn.o"), d, d),
                heads: cfg.heads,
            },
            ln2: b.norm(&format!("{name}.global.ln2"), d),
            fc1: b.linear(&format!("{name}.global.mlp.fc1"), d, hidden),
            fc2: b.linear(&format!("{name}.global.mlp.fc2"), hidden, d),
        };
        let [c10, c5, c25] = cfg.local_widths();
        let o = Conv2dOptions::default();
        let deform = |b: &mut Builder, i: usize, cin: usize, cout: usize| DeformLayer {
            conv: b.conv(&format!("{name}.local.deform{i}"), 3, cin, cout, o),
            offset: cfg
                .deformable
                .then(|| b.zero_conv(&format!("{name}.local.deform{i}.offset"), 3, cin, 18)),
        };
        let ln = b.norm(&format!("{name}.local.ln"), d);
        let conv1 = b.conv(&format!("{name}.local.conv1"), 3, d, c10, o);
        let conv2 = b.conv(&format!("{name}.local.conv2"), 3, c10, c5, o);
        let deform = [deform(b, 1, c5, c25), deform(b, 2, c25, c25)];
        let local = LocalLayers {
            ln,
            conv1,
            conv2,
            deform,
            fc: b.linear(&format!("{name}.local.fc"), c25, d),
        };
        DtLayers {
            global,
            local,
            window: cfg.window,
            shift,
        }
    }
}

/// `[G, n, D] → [G·heads, n, D/heads]`.
fn split_heads<'t, T: Real>(x: &Var<'t, T>, heads: usize) -> Result<Var<'t, T>> {
    let (g, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let x = ops::reshape(x, &[g, n, heads, d / heads])?;
    let x = ops::permute(&x, &[0, 2, 1, 3])?;
    ops::reshape(&x, &[g * heads, n, d / heads])
}

fn merge_heads<'t, T: Real>(x: &Var<'t, T>, heads: usize) -> Result<Var<'t, T>> {
    let (gh, n, dh) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let x = ops::reshape(x, &[gh / heads, heads, n, dh])?;
    let x = ops::permute(&x, &[0, 2, 1, 3])?;
    ops::reshape(&x, &[gh / heads, n, heads * dh])
}

/// Multi-head self-attention over each row of `x: [G, n, D]`. Also returns
/// the attention weights `[G·heads, n, n]`.
pub fn msa_with_weights<'t, T: Real>(
    p: &[Var<'t, T>],
    m: &MsaLayers,
    x: &Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    x.value().expect_rank("msa", 3)?;
    let d = x.shape()[2];
    if d % m.heads != 0 {
        return Err(Error::Config(format!("embed {d} is not divisible by {} heads", m.heads)));
    }
    let q = split_heads(&m.q.apply(p, x)?, m.heads)?;
    let k = split_heads(&m.k.apply(p, x)?, m.heads)?;
    let v = split_heads(&m.v.apply(p, x)?, m.heads)?;
    let scale = T::lit(1.0 / ((d / m.heads) as f64).sqrt());
    let scores = ops::scale(&ops::bmm(&q, &k, true)?, scale);
    let attn = ops::softmax(&scores);
    let ctx = merge_heads(&ops::bmm(&attn, &v, false)?, m.heads)?;
    Ok((m.o.apply(p, &ctx)?, attn))
}

pub fn msa<'t, T: Real>(p: &[Var<'t, T>], m: &MsaLayers, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(msa_with_weights(p, m, x)?.0)
}

/// Attention and MLP sub-blocks with pre-norm residuals, on window tokens
/// `[G, n, D]`.
pub fn global_tokens<'t, T: Real>(p: &[Var<'t, T>], g: &GlobalLayers, em0: &Var<'t, T>) -> Result<Var<'t, T>> {
    let em1 = ops::add(&msa(p, &g.msa, &g.ln1.apply(p, em0)?)?, em0)?;
    let hidden = ops::gelu(&g.fc1.apply(p, &g.ln2.apply(p, &em1)?)?);
    ops::add(&g.fc2.apply(p, &hidden)?, &em1)
}

/// Global branch on an image: partition, [`global_tokens`], reverse.
pub fn global_branch<'t, T: Real>(
    p: &[Var<'t, T>],
    g: &GlobalLayers,
    x: &Var<'t, T>,
    window: usize,
    shift: usize,
) -> Result<Var<'t, T>> {
    let [b, h, w, _] = bhwc("global_branch", x.value())?;
    let grid = WindowGrid::new(b, h, w, window, shift)?;
    let tokens = window::partition(x, &grid)?;
    window::reverse(&global_tokens(p, g, &tokens)?, &grid)
}

/// Normalised input `f_in` and channel weights `w_c` (`B×D`, in `(0, 1)`).
pub fn local_gate<'t, T: Real>(p: &[Var<'t, T>], l: &LocalLayers, x: &Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let f_in = l.ln.apply(p, x)?;
    let mut h = ops::leaky_relu(&l.conv1.apply(p, &f_in)?);
    h = ops::leaky_relu(&l.conv2.apply(p, &h)?);
    for d in &l.deform {
        h = ops::leaky_relu(&d.apply(p, &h)?);
    }
    let w_c = ops::sigmoid(&l.fc.apply(p, &ops::global_avg_pool(&h)?)?);
    Ok((f_in, w_c))
}

/// `LF_local = w_c ⊙ f_in`.
pub fn local_branch<'t, T: Real>(p: &[Var<'t, T>], l: &LocalLayers, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let (f_in, w_c) = local_gate(p, l, x)?;
    ops::mul_channel(&f_in, &w_c)
}

/// Token sequence `B×(H·W)×D` to image layout.
pub fn tokens_to_image<'t, T: Real>(tokens: &Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
    tokens.value().expect_rank("tokens_to_image", 3)?;
    let s = tokens.shape();
    if s[1] != h * w {
        return Err(Error::shape(
            "tokens_to_image",
            "token count",
            format!("{} tokens cannot form a {h}x{w} grid", s[1]),
        ));
    }
    ops::reshape(tokens, &[s[0], h, w, s[2]])
}

/// `f_fusion = GF_global + LF_local`.
pub fn dt_forward<'t, T: Real>(p: &[Var<'t, T>], dt: &DtLayers, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let gf = global_branch(p, &dt.global, x, dt.window, dt.shift)?;
    let lf = local_branch(p, &dt.local, x)?;
    ops::add(&gf, &lf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::model::params::ParamStore;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(cfg: &HdtConfig, shift: usize, seed: u64) -> (DtLayers, ParamStore<f64>) {
        let mut b = Builder::default();
        let dt = DtLayers::build(&mut b, "dt", cfg, shift);
        (dt, b.finish(seed))
    }

    fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = HdtConfig::tiny();
        let (dt, store) = block(&cfg, 0, 3);
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let x = tape.constant(rand_tensor(1, &[3, 16, 16]));
        let (out, attn) = msa_with_weights(&p, &dt.global.msa, &x).unwrap();
        assert_eq!(out.shape(), &[3, 16, 16]);
        assert_eq!(attn.shape(), &[6, 16, 16]);
        for row in attn.value().data().chunks_exact(16) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let cfg = HdtConfig::tiny();
        let (dt, mut store) = block(&cfg, 0, 4);
        let m = dt.global.msa;
        for i in [m.q.w, m.q.b, m.k.w, m.k.b] {
            let z = Tensor::zeros(store.get(i).shape()).unwrap();
            store.set(i, z).unwrap();
        }
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let x = tape.constant(rand_tensor(2, &[2, 5, 16]));
        let (out, attn) = msa_with_weights(&p, &m, &x).unwrap();
        assert!(attn.value().data().iter().all(|&a| (a - 0.2).abs() < 1e-15));
        // Every query sees the mean of the window's values.
        let v = m.v.apply(&p, &x).unwrap();
        let o = out.value();
        for g in 0..2 {
            let mut mean = vec![0.0; 16];
            for t in 0..5 {
                for c in 0..16 {
                    mean[c] += v.value().at(&[g, t, c]) / 5.0;
                }
            }
            let mean_t = tape.constant(Tensor::new(&[1, 1, 16], mean).unwrap());
            let expect = m.o.apply(&p, &mean_t).unwrap();
            for t in 0..5 {
                for c in 0..16 {
                    assert!((o.at(&[g, t, c]) - expect.value().at(&[0, 0, c])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_token_windows() {
        let cfg = HdtConfig::tiny();
        let (dt, store) = block(&cfg, 0, 5);
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let x = tape.constant(rand_tensor(3, &[4, 1, 16]));
        let (_, attn) = msa_with_weights(&p, &dt.global.msa, &x).unwrap();
        assert!(attn.value().data().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn token_permutation_equivariance() {
        let cfg = HdtConfig::tiny();
        let (dt, store) = block(&cfg, 0, 6);
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let xt = rand_tensor(4, &[1, 6, 16]);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted = Tensor::from_fn(&[1, 6, 16], |i| xt.data()[perm[i / 16] * 16 + i % 16]).unwrap();
        let a = global_tokens(&p, &dt.global, &tape.constant(xt)).unwrap();
        let b = global_tokens(&p, &dt.global, &tape.constant(permuted)).unwrap();
        for t in 0..6 {
            for c in 0..16 {
                assert!((b.value().at(&[0, t, c]) - a.value().at(&[0, perm[t], c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_weights_in_unit_interval_and_shape_preserved() {
        let cfg = HdtConfig::tiny();
        let (dt, store) = block(&cfg, 2, 7);
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let x = tape.constant(rand_tensor(5, &[2, 6, 5, 16]));
        let (_, w) = local_gate(&p, &dt.local, &x).unwrap();
        assert_eq!(w.shape(), &[2, 16]);
        assert!(w.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        let y = dt_forward(&p, &dt, &x).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn standard_local_path_matches_zero_offsets() {
        let cfg = HdtConfig::tiny();
        let (deform, store) = block(&cfg, 0, 8);
        let plain_cfg = HdtConfig {
            deformable: false,
            ..cfg
        };
        let mut b = Builder::default();
        let plain = DtLayers::build(&mut b, "dt", &plain_cfg, 0);
        let mut plain_store: ParamStore<f64> = b.finish(0);
        for (i, spec) in plain_store.specs().to_vec().iter().enumerate() {
            let j = store.index_of(&spec.name).unwrap();
            plain_store.set(i, store.get(j).clone()).unwrap();
        }
        let tape = Tape::no_grad();
        let x = tape.constant(rand_tensor(6, &[1, 5, 5, 16]));
        let a = local_branch(&store.bind(&tape), &deform.local, &x).unwrap();
        let b = local_branch(&plain_store.bind(&tape), &plain.local, &x).unwrap();
        assert!(a.value().max_abs_diff(b.value()).unwrap() <= 1e-12);
    }

    #[test]
    fn token_grid_mismatch_is_an_error() {
        let tape = Tape::<f32>::no_grad();
        let t = tape.constant(Tensor::zeros(&[1, 12, 4]).unwrap());
        assert!(tokens_to_image(&t, 3, 4).is_ok());
        assert!(tokens_to_image(&t, 3, 5).is_err());
    }
}
