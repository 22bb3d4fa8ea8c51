use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::hdr::{build_inputs, mu_law_tensor, SampleTriplet};
use crate::metrics::{cap_psnr, psnr};
use crate::model::{model_checkpoint, model_from_checkpoint, Checkpoint, HdtConfig, Model};
use crate::tensor::{DType, Real, Tensor};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{l1_tonemapped, l1_tonemapped_loss};
use super::patches::{augment, crop_patches};

pub const CHECKPOINT_FILE: &str = "checkpoint.hdt";
pub const LOG_FILE: &str = "metrics.jsonl";

/// Optimisation and data-pipeline settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub patch: usize,
    pub stride: usize,
    pub seed: u64,
    pub mu: f64,
    pub gamma: f64,
    pub adam: AdamConfig,
    /// Random dihedral transform per patch.
    pub augment: bool,
    /// Stop after this many optimiser steps in total; 0 for no limit.
    pub max_steps: usize,
    /// Write a checkpoint every this many epochs; 0 writes only at the end.
    pub checkpoint_every: usize,
    pub precision: DType,
    pub checkpoint: String,
    pub log: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 100,
            patch: 128,
            stride: 64,
            seed: 0,
            mu: 5000.0,
            gamma: 2.2,
            adam: AdamConfig::default(),
            augment: true,
            max_steps: 0,
            checkpoint_every: 1,
            precision: DType::F32,
            checkpoint: CHECKPOINT_FILE.into(),
            log: LOG_FILE.into(),
        }
    }

    /// Settings for 32×32 synthetic samples.
    pub fn tiny() -> Self {
        TrainConfig {
            batch_size: 2,
            epochs: 250,
            patch: 32,
            stride: 16,
            augment: false,
            checkpoint_every: 50,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected 'paper' or 'tiny')"))),
        }
    }

    pub fn validate(&self, model: &HdtConfig) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patch", self.patch),
            ("stride", self.stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.patch < model.window {
            return Err(Error::Config(format!(
                "patch ({}) must be at least the window size ({})",
                self.patch, model.window
            )));
        }
        if self.stride > self.patch {
            return Err(Error::Config(format!(
                "stride ({}) must not exceed patch ({})",
                self.stride, self.patch
            )));
        }
        for (name, v) in [("mu", self.mu), ("gamma", self.gamma), ("lr", self.adam.lr), ("eps", self.adam.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patch", self.patch.to_string()),
            ("stride", self.stride.to_string()),
            ("seed", self.seed.to_string()),
            ("mu", self.mu.to_string()),
            ("gamma", self.gamma.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("eps", self.adam.eps.to_string()),
            ("augment", self.augment.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("precision", self.precision.name().to_string()),
            ("checkpoint", self.checkpoint.clone()),
            ("log", self.log.clone()),
        ]
    }

    /// Sets one field from text. Returns `Ok(false)` for keys that are not
    /// training fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str, ty: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected {ty}, got '{value}'")))
        }
        const INT: &str = "a non-negative integer";
        const NUM: &str = "a number";
        match key {
            "batch_size" => self.batch_size = parse(key, value, INT)?,
            "epochs" => self.epochs = parse(key, value, INT)?,
            "patch" => self.patch = parse(key, value, INT)?,
            "stride" => self.stride = parse(key, value, INT)?,
            "seed" => self.seed = parse(key, value, INT)?,
            "mu" => self.mu = parse(key, value, NUM)?,
            "gamma" => self.gamma = parse(key, value, NUM)?,
            "lr" => self.adam.lr = parse(key, value, NUM)?,
            "beta1" => self.adam.beta1 = parse(key, value, NUM)?,
            "beta2" => self.adam.beta2 = parse(key, value, NUM)?,
            "eps" => self.adam.eps = parse(key, value, NUM)?,
            "augment" => self.augment = parse(key, value, "true or false")?,
            "max_steps" => self.max_steps = parse(key, value, INT)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value, INT)?,
            "precision" => {
                self.precision = match value {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(Error::Config(format!("precision: expected f32 or f64, got '{value}'"))),
                }
            }
            "checkpoint" => self.checkpoint = value.to_string(),
            "log" => self.log = value.to_string(),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Splits samples sorted by id into training and validation sets; the last
/// 10% (rounded down) validate.
pub fn split_validation(mut samples: Vec<SampleTriplet>) -> (Vec<SampleTriplet>, Vec<SampleTriplet>) {
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let n_val = samples.len() / 10;
    let val = samples.split_off(samples.len() - n_val);
    (samples, val)
}

fn stack<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts[0].shape();
    let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
    for p in parts {
        p.expect_same_shape("stack", &parts[0])?;
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![parts.len() * first[0]];
    shape.extend_from_slice(&first[1..]);
    Tensor::new(&shape, data)
}

/// Network inputs and normalised ground truth for one sample.
fn sample_tensors<T: Real>(s: &SampleTriplet, gamma: f64) -> Result<([Tensor<T>; 3], Tensor<T>)> {
    let gt = s.ground_truth().ok_or_else(|| Error::Dataset {
        path: PathBuf::from(&s.id),
        msg: "training sample has no ground truth".into(),
    })?;
    let gt = gt.to_tensor::<T>();
    let gt = gt.reshape(&[1, s.height(), s.width(), 3])?;
    Ok((build_inputs(s, gamma)?, gt))
}

/// Mean tonemapped L1 of the model over whole samples.
pub fn dataset_loss<T: Real>(model: &Model<T>, samples: &[SampleTriplet], mu: f64, gamma: f64) -> Result<f64> {
    let losses: Vec<f64> = samples
        .iter()
        .map(|s| {
            let ([a, b, c], gt) = sample_tensors::<T>(s, gamma)?;
            l1_tonemapped(&model.predict([&a, &b, &c])?, &gt, mu)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mean PSNR in the tonemapped domain over whole samples, capped per sample.
pub fn dataset_psnr_mu<T: Real>(model: &Model<T>, samples: &[SampleTriplet], mu: f64, gamma: f64) -> Result<f64> {
    let values: Vec<f64> = samples
        .iter()
        .map(|s| {
            let ([a, b, c], gt) = sample_tensors::<T>(s, gamma)?;
            let pred = model.predict([&a, &b, &c])?;
            Ok(cap_psnr(psnr(&mu_law_tensor(&pred, mu)?, &mu_law_tensor(&gt, mu)?, 1.0)?))
        })
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub psnr_mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Loss of every optimiser step taken in this run.
    pub losses: Vec<f64>,
    pub records: Vec<LogRecord>,
    pub steps: u64,
    pub interrupted: bool,
}

/// Model, optimiser state and the position in the epoch schedule.
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub config: TrainConfig,
    /// Epoch currently in progress.
    pub epoch: usize,
    /// Next batch within the current epoch.
    pub batch: usize,
    train: Vec<SampleTriplet>,
    val: Vec<SampleTriplet>,
    patches: Vec<SampleTriplet>,
    epoch_losses: Vec<f64>,
}

const SHUFFLE_SALT: u64 = 0x5eed_5eed_0001;
const AUGMENT_SALT: u64 = 0x5eed_5eed_0002;

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig, samples: Vec<SampleTriplet>) -> Result<Self> {
        config.validate(model.config())?;
        if samples.is_empty() {
            return Err(Error::Dataset {
                path: PathBuf::new(),
                msg: "dataset is empty".into(),
            });
        }
        if let Some(s) = samples.iter().find(|s| s.ground_truth().is_none()) {
            return Err(Error::Dataset {
                path: PathBuf::from(&s.id),
                msg: "training sample has no ground truth".into(),
            });
        }
        let (train, val) = split_validation(samples);
        let patches = train
            .par_iter()
            .map(|s| crop_patches(s, config.patch, config.stride))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let adam = AdamState::new(config.adam, model.params());
        Ok(Trainer {
            model,
            adam,
            config,
            epoch: 0,
            batch: 0,
            train,
            val,
            patches,
            epoch_losses: Vec::new(),
        })
    }

    pub fn train_set(&self) -> &[SampleTriplet] {
        &self.train
    }

    /// Validation samples, or the training samples when none were held out.
    pub fn validation_set(&self) -> &[SampleTriplet] {
        if self.val.is_empty() {
            &self.train
        } else {
            &self.val
        }
    }

    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.patches.len().div_ceil(self.config.batch_size)
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    fn epoch_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.patches.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ SHUFFLE_SALT);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);
        order
    }

    fn augment_code(&self, position: usize) -> u8 {
        if !self.config.augment {
            return 0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ AUGMENT_SALT);
        rng.set_stream((self.epoch * self.patches.len() + position) as u64);
        rng.random_range(0..8)
    }

    /// Inputs and targets of the next batch, stacked along the batch axis.
    fn next_batch(&self) -> Result<([Tensor<T>; 3], Tensor<T>)> {
        let order = self.epoch_order();
        let bs = self.config.batch_size;
        let start = self.batch * bs;
        let positions: Vec<usize> = (start..(start + bs).min(order.len())).collect();
        let items: Vec<([Tensor<T>; 3], Tensor<T>)> = positions
            .par_iter()
            .map(|&pos| {
                let patch = augment(&self.patches[order[pos]], self.augment_code(pos))?;
                sample_tensors::<T>(&patch, self.config.gamma)
            })
            .collect::<Result<_>>()?;
        let column = |k: usize| stack(&items.iter().map(|(x, _)| x[k].clone()).collect::<Vec<_>>());
        let gt = stack(&items.iter().map(|(_, g)| g.clone()).collect::<Vec<_>>())?;
        Ok(([column(0)?, column(1)?, column(2)?], gt))
    }

    /// One forward/backward/update on the next batch. Returns the batch loss
    /// measured before the update.
    pub fn step(&mut self) -> Result<f64> {
        let ([a, b, c], gt) = self.next_batch()?;
        let tape = Tape::new();
        let p = self.model.params().bind(&tape);
        let (a, b, c, gt) = (tape.constant(a), tape.constant(b), tape.constant(c), tape.constant(gt));
        let out = self.model.forward(&p, [&a, &b, &c])?;
        let loss = l1_tonemapped_loss(&out, &gt, self.config.mu)?;
        let value = loss.value().data()[0].to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("loss at step {} is {value}", self.adam.step + 1),
            });
        }
        let grads = tape.backward(&loss)?;
        let grads: Vec<Tensor<T>> = p.iter().map(|v| grads.get_or_zeros(v)).collect();
        adam_step(self.model.params_mut(), &grads, &mut self.adam)?;
        self.epoch_losses.push(value);
        self.batch += 1;
        Ok(value)
    }

    fn end_epoch(&mut self) -> Result<LogRecord> {
        let loss = self.epoch_losses.iter().sum::<f64>() / self.epoch_losses.len().max(1) as f64;
        self.epoch_losses.clear();
        let psnr_mu = dataset_psnr_mu(&self.model, self.validation_set(), self.config.mu, self.config.gamma)?;
        let rec = LogRecord {
            epoch: self.epoch,
            step: self.adam.step,
            loss,
            psnr_mu,
        };
        self.epoch += 1;
        self.batch = 0;
        Ok(rec)
    }

    /// Model, optimiser moments and schedule position.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = model_checkpoint(&self.model);
        for (k, v) in self.config.to_pairs() {
            ck.set_meta(format!("train.{k}"), v);
        }
        ck.set_meta("train.epoch", self.epoch.to_string());
        ck.set_meta("train.batch", self.batch.to_string());
        ck.set_meta("adam.step", self.adam.step.to_string());
        let store = self.model.params();
        for (i, spec) in store.specs().iter().enumerate() {
            ck.push(format!("adam.m.{}", spec.name), &self.adam.m[i]);
            ck.push(format!("adam.v.{}", spec.name), &self.adam.v[i]);
        }
        ck
    }

    /// Continues a run saved by [`Trainer::checkpoint`]. The stored model
    /// configuration must equal `model_cfg`.
    pub fn resume(ck: &Checkpoint, model_cfg: &HdtConfig, config: TrainConfig, samples: Vec<SampleTriplet>) -> Result<Self> {
        let model = model_from_checkpoint::<T>(ck, Some(model_cfg))?;
        let mut t = Trainer::new(model, config, samples)?;
        let field = |key: &str| -> Result<u64> {
            ck.meta(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing '{key}'")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("'{key}' is not an integer")))
        };
        t.epoch = field("train.epoch")? as usize;
        t.batch = field("train.batch")? as usize;
        t.adam.step = field("adam.step")?;
        let names: Vec<String> = t.model.params().specs().iter().map(|s| s.name.clone()).collect();
        for (i, name) in names.iter().enumerate() {
            t.adam.m[i] = ck.tensor(&format!("adam.m.{name}"))?;
            t.adam.v[i] = ck.tensor(&format!("adam.v.{name}"))?;
            for (what, buf) in [("m", &t.adam.m[i]), ("v", &t.adam.v[i])] {
                if buf.shape() != t.model.params().get(i).shape() {
                    return Err(Error::ManifestMismatch(format!("adam.{what}.{name}: shape {:?}", buf.shape())));
                }
            }
        }
        Ok(t)
    }

    fn done(&self) -> bool {
        self.epoch >= self.config.epochs || (self.config.max_steps > 0 && self.adam.step >= self.config.max_steps as u64)
    }

    /// Trains until the epoch or step budget is used up or `stop` is raised.
    /// With `out_dir`, appends epoch records to the log and writes
    /// checkpoints there; a checkpoint is always written on exit, including
    /// interruption, but never after a numerical failure.
    pub fn run(&mut self, out_dir: Option<&Path>, stop: Option<&AtomicBool>) -> Result<TrainSummary> {
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
                let path = dir.join(&self.config.log);
                Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&path)
                        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?,
                )
            }
            None => None,
        };
        let mut summary = TrainSummary {
            losses: Vec::new(),
            records: Vec::new(),
            steps: 0,
            interrupted: false,
        };
        let per_epoch = self.batches_per_epoch();
        while !self.done() {
            if stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
                summary.interrupted = true;
                break;
            }
            let loss = self.step()?;
            log::debug!("epoch {} step {} loss {loss:.6}", self.epoch, self.adam.step);
            summary.losses.push(loss);
            summary.steps += 1;
            let epoch_done = self.batch >= per_epoch;
            let budget_done = self.config.max_steps > 0 && self.adam.step >= self.config.max_steps as u64;
            if epoch_done || budget_done {
                let rec = self.end_epoch_or_partial(epoch_done)?;
                log::info!("epoch {} step {} loss {:.6} psnr_mu {:.3}", rec.epoch, rec.step, rec.loss, rec.psnr_mu);
                if let Some(f) = log.as_mut() {
                    write_record(f, &rec)?;
                }
                summary.records.push(rec);
                let every = self.config.checkpoint_every;
                if let Some(dir) = out_dir {
                    if epoch_done && every > 0 && self.epoch % every == 0 && !self.done() {
                        self.checkpoint().write(dir.join(&self.config.checkpoint))?;
                    }
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint().write(dir.join(&self.config.checkpoint))?;
        }
        Ok(summary)
    }

    fn end_epoch_or_partial(&mut self, epoch_done: bool) -> Result<LogRecord> {
        if epoch_done {
            return self.end_epoch();
        }
        let (epoch, batch) = (self.epoch, self.batch);
        let rec = self.end_epoch()?;
        self.epoch = epoch;
        self.batch = batch;
        Ok(rec)
    }
}

fn write_record(f: &mut File, rec: &LogRecord) -> Result<()> {
    let line = serde_json::to_string(rec).expect("plain data serialises");
    writeln!(f, "{line}").map_err(|e| Error::io("writing metrics log", e))
}

/// Builds a model from `model_cfg` and trains it on `samples`.
pub fn train_loop<T: Real>(
    samples: Vec<SampleTriplet>,
    model_cfg: &HdtConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Model<T>, TrainSummary)> {
    let model = Model::<T>::new(model_cfg.clone(), config.seed)?;
    let mut trainer = Trainer::new(model, config.clone(), samples)?;
    let summary = trainer.run(out_dir, None)?;
    Ok((trainer.model, summary))
}
