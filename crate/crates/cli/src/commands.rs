use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use hdt_core::gradcheck::{check, OP_NAMES};
use hdt_core::hdr::{load_dataset, load_sample, mu_law, write_pfm, write_ppm, DEFAULT_GAMMA, DEFAULT_MU};
use hdt_core::metrics::eval_report;
use hdt_core::model::{gradcheck::CASE_NAMES, model_forward, model_from_checkpoint, Checkpoint, Manifest};
use hdt_core::train::{synth_dataset, Trainer};
use hdt_core::{DType, Error, HdtConfig, LdrImage, Model, Real, RunConfig, SampleTriplet};

use crate::{Ablate, Failure};

fn load_config(path: Option<&Path>) -> Result<Option<RunConfig>, Failure> {
    Ok(path.map(RunConfig::load).transpose()?)
}

fn apply_ablation(cfg: &mut HdtConfig, ablate: Option<Ablate>) {
    match ablate {
        Some(Ablate::Sar) => cfg.sar = false,
        Some(Ablate::Dt) => cfg.deformable = false,
        Some(Ablate::Both) => {
            cfg.sar = false;
            cfg.deformable = false;
        }
        None => {}
    }
}

fn precision_of(cfg: Option<&RunConfig>) -> DType {
    cfg.map_or(DType::F32, |c| c.train.precision)
}

pub fn fuse(
    input: &Path,
    checkpoint: &Path,
    output: &Path,
    tonemapped: Option<&Path>,
    config: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let ck = Checkpoint::read(checkpoint)?;
    let expected = cfg.as_ref().map(|c| &c.model);
    let (mu, gamma) = cfg.as_ref().map_or((DEFAULT_MU, DEFAULT_GAMMA), |c| (c.train.mu, c.train.gamma));
    let sample = load_sample(input)?;
    let hdr = match precision_of(cfg.as_ref()) {
        DType::F32 => model_forward(&model_from_checkpoint::<f32>(&ck, expected)?, &sample, gamma)?,
        DType::F64 => model_forward(&model_from_checkpoint::<f64>(&ck, expected)?, &sample, gamma)?,
    };
    write_pfm(output, &hdr)?;
    log::info!("wrote {}x{} HDR image to {}", hdr.width(), hdr.height(), output.display());
    if let Some(path) = tonemapped {
        let pixels = hdr
            .pixels()
            .iter()
            .map(|&v| mu_law(v as f64, mu).map(|t| t as f32))
            .collect::<Result<Vec<_>, Error>>()?;
        write_ppm(path, &LdrImage::new(hdr.height(), hdr.width(), pixels, 1.0)?, 255)?;
        log::info!("wrote tonemapped preview to {}", path.display());
    }
    Ok(())
}

fn train_with<T: Real>(
    cfg: &RunConfig,
    samples: Vec<SampleTriplet>,
    out: &Path,
    resume: bool,
    stop: &AtomicBool,
) -> Result<(), Failure> {
    let ck_path = out.join(&cfg.train.checkpoint);
    let mut trainer = if resume && ck_path.exists() {
        let ck = Checkpoint::read(&ck_path)?;
        let t = Trainer::<T>::resume(&ck, &cfg.model, cfg.train.clone(), samples)?;
        log::info!("resuming at epoch {} after {} steps", t.epoch, t.step_count());
        t
    } else {
        let model = Model::<T>::new(cfg.model.clone(), cfg.train.seed)?;
        Trainer::new(model, cfg.train.clone(), samples)?
    };
    log::info!(
        "{} model, {} parameters, {} training patches, {} batches per epoch",
        cfg.model.variant(),
        trainer.model.param_count(),
        trainer.patch_count(),
        trainer.batches_per_epoch()
    );
    let summary = trainer.run(Some(out), Some(stop))?;
    if summary.interrupted {
        log::warn!("interrupted after {} steps; checkpoint written", trainer.step_count());
    }
    if let Some(last) = summary.records.last() {
        println!(
            "epoch {} step {} loss {:.6} psnr_mu {:.3}",
            last.epoch, last.step, last.loss, last.psnr_mu
        );
    }
    Ok(())
}

pub fn train(
    data: Option<&Path>,
    synthetic: Option<usize>,
    config: Option<&Path>,
    out: &Path,
    ablate: Option<Ablate>,
    resume: bool,
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?.unwrap_or_default();
    apply_ablation(&mut cfg.model, ablate);
    cfg.validate()?;
    let samples = match (data, synthetic) {
        (Some(root), _) => load_dataset(root)?,
        (None, Some(n)) => synth_dataset(n, cfg.train.seed)?,
        (None, None) => unreachable!("clap requires a data source"),
    };
    std::fs::create_dir_all(out).map_err(|e| Failure {
        code: 1,
        message: format!("creating {}: {e}", out.display()),
    })?;
    let cfg_path = out.join("config.txt");
    std::fs::write(&cfg_path, cfg.to_text()).map_err(|e| Failure {
        code: 1,
        message: format!("writing {}: {e}", cfg_path.display()),
    })?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("Ctrl-C handler unavailable: {e}");
    }
    match cfg.train.precision {
        DType::F32 => train_with::<f32>(&cfg, samples, out, resume, &stop),
        DType::F64 => train_with::<f64>(&cfg, samples, out, resume, &stop),
    }
}

pub fn eval(data: &Path, checkpoint: &Path, json: bool, config: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let ck = Checkpoint::read(checkpoint)?;
    let expected = cfg.as_ref().map(|c| &c.model);
    let (mu, gamma) = cfg.as_ref().map_or((DEFAULT_MU, DEFAULT_GAMMA), |c| (c.train.mu, c.train.gamma));
    let samples = load_dataset(data)?;
    let report = match precision_of(cfg.as_ref()) {
        DType::F32 => eval_report(&model_from_checkpoint::<f32>(&ck, expected)?, &samples, mu, gamma)?,
        DType::F64 => eval_report(&model_from_checkpoint::<f64>(&ck, expected)?, &samples, mu, gamma)?,
    };
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_tsv());
    }
    Ok(())
}

pub fn gradcheck(ops: &str, seed: u64, seeds: usize) -> Result<(), Failure> {
    let names: Vec<&str> = if ops == "all" {
        OP_NAMES.iter().chain(CASE_NAMES).copied().collect()
    } else {
        vec![ops]
    };
    let start = Instant::now();
    let mut failed = Vec::new();
    println!("check\tmax_rel_err\tthreshold\tscreened\tseconds\tresult");
    for name in names {
        let r = check(name, seed, seeds)?;
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{}\t{:.3e}\t{:.0e}\t{}/{}\t{:.2}\t{verdict}",
            r.name,
            r.max_rel_err,
            r.threshold,
            r.kinks,
            r.checked + r.kinks,
            r.seconds
        );
        if !r.passed() {
            failed.push(r.name);
        }
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!("gradient check failed for {}", failed.join(", ")),
        })
    }
}

pub fn inspect(
    config: Option<&Path>,
    checkpoint: Option<&Path>,
    preset: Option<&str>,
    ablate: Option<Ablate>,
) -> Result<(), Failure> {
    let manifest = if let Some(path) = checkpoint {
        let ck = Checkpoint::read(path)?;
        model_from_checkpoint::<f32>(&ck, None)?.manifest()
    } else {
        let mut cfg = match (config, preset) {
            (Some(path), _) => RunConfig::load(path)?.model,
            (None, Some(name)) => HdtConfig::preset(name)?,
            (None, None) => HdtConfig::paper(),
        };
        apply_ablation(&mut cfg, ablate);
        cfg.validate()?;
        Manifest::new(&cfg, Model::<f32>::new(cfg.clone(), 0)?.params())
    };
    print!("{}", manifest.to_text());
    Ok(())
}
