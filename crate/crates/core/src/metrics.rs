//! PSNR and SSIM in the tonemapped and linear domains.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hdr::{build_inputs, mu_law_tensor, SampleTriplet};
use crate::model::Model;
use crate::tensor::{Real, Tensor};

/// Reported PSNR values are clamped to this many dB.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10·log10(peak² / MSE)`; `+∞` when the inputs are identical.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    a.expect_same_shape("psnr", b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum::<f64>()
        / a.numel() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

pub fn cap_psnr(v: f64) -> f64 {
    v.min(PSNR_CAP)
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Height, width and the channel-mean grey image of an `[1,]H×W×C` tensor.
pub fn to_gray<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    let s = x.shape();
    let (h, w, c) = match s {
        [h, w, c] => (*h, *w, *c),
        [1, h, w, c] => (*h, *w, *c),
        _ => return Err(Error::shape("ssim", "shape", format!("expected [H, W, C] or [1, H, W, C], got {s:?}"))),
    };
    let gray = x
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / c as f64)
        .collect();
    Ok((h, w, gray))
}

/// Valid-mode separable filtering of an `h×w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions of the grey images, with an 11×11
/// Gaussian window (σ = 1.5) and dynamic range 1.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape("ssim", b)?;
    let (h, w, ga) = to_gray(a)?;
    let (_, _, gb) = to_gray(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            "size",
            format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&ga, h, w, &k);
    let mu_b = filter_valid(&gb, h, w, &k);
    let aa = filter_valid(&prod(&ga, &ga), h, w, &k);
    let bb = filter_valid(&prod(&gb, &gb), h, w, &k);
    let ab = filter_valid(&prod(&ga, &gb), h, w, &k);
    let (c1, c2) = (SSIM_K1.powi(2), SSIM_K2.powi(2));
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub id: String,
    pub psnr_mu: f64,
    pub psnr_l: f64,
    pub ssim_mu: f64,
    pub ssim_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: EvalRow,
}

/// Metrics of one prediction against ground truth, both normalised radiance.
/// PSNR values are capped at [`PSNR_CAP`].
pub fn evaluate_pair<T: Real>(id: &str, pred: &Tensor<T>, gt: &Tensor<T>, mu: f64) -> Result<EvalRow> {
    let pm = mu_law_tensor(pred, mu)?;
    let gm = mu_law_tensor(gt, mu)?;
    Ok(EvalRow {
        id: id.to_string(),
        psnr_mu: cap_psnr(psnr(&pm, &gm, 1.0)?),
        psnr_l: cap_psnr(psnr(pred, gt, 1.0)?),
        ssim_mu: ssim(&pm, &gm)?,
        ssim_l: ssim(pred, gt)?,
    })
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dataset {
                path: Default::default(),
                msg: "no samples with ground truth to evaluate".into(),
            });
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean = EvalRow {
            id: "mean".into(),
            psnr_mu: avg(|r| r.psnr_mu),
            psnr_l: avg(|r| r.psnr_l),
            ssim_mu: avg(|r| r.ssim_mu),
            ssim_l: avg(|r| r.ssim_l),
        };
        Ok(EvalReport { rows, mean })
    }

    /// Tab-separated table with a header row and a final `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sample\tpsnr_mu\tpsnr_l\tssim_mu\tssim_l\n");
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.id, r.psnr_mu, r.psnr_l, r.ssim_mu, r.ssim_l
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serialises")
    }
}

/// Runs the model on every sample with ground truth. Samples without it are
/// skipped with a warning.
pub fn eval_report<T: Real>(model: &Model<T>, dataset: &[SampleTriplet], mu: f64, gamma: f64) -> Result<EvalReport> {
    let rows: Vec<Option<EvalRow>> = dataset
        .par_iter()
        .map(|s| {
            let Some(gt) = s.ground_truth() else {
                log::warn!("sample '{}' has no ground truth; skipped", s.id);
                return Ok(None);
            };
            let [a, b, c] = build_inputs::<T>(s, gamma)?;
            let pred = model.predict([&a, &b, &c])?;
            evaluate_pair(&s.id, &pred, &gt.to_tensor::<T>(), mu).map(Some)
        })
        .collect::<Result<_>>()?;
    EvalReport::from_rows(rows.into_iter().flatten().collect())
}
