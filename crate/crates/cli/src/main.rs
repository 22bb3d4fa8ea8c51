//! `hdt`: fuse, train, evaluate, gradient-check and inspect HDR deghosting
//! models.
//!
//! Exit codes: 0 success, 1 I/O or data error, 2 configuration or checkpoint
//! mismatch (including usage errors), 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hdt_core::Error;

#[derive(Parser)]
#[command(name = "hdt", version, about = "Multi-exposure HDR deghosting with dual transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablate {
    /// Drop attention on the reference feature.
    Sar,
    /// Use plain convolutions in the local branch.
    Dt,
    /// Both: the baseline model.
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse one exposure triplet into an HDR image.
    Fuse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Linear HDR output (PFM).
        #[arg(long)]
        output: PathBuf,
        /// μ-law tonemapped 8-bit preview (PPM).
        #[arg(long)]
        tonemapped: Option<PathBuf>,
        /// The checkpoint must match this configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and write checkpoints and a metrics log.
    Train {
        /// Dataset root with one directory per sample.
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        data: Option<PathBuf>,
        /// Train on this many generated scenes instead.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        ablate: Option<Ablate>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Report PSNR and SSIM in the tonemapped and linear domains.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value = "tiny", value_parser = ["tiny"])]
        scale: String,
        /// `all`, or a kernel or block name.
        #[arg(long, default_value = "all")]
        ops: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per check.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Print the parameter manifest of a configuration or checkpoint.
    Inspect {
        #[arg(long, conflicts_with = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = ["paper", "tiny"], conflicts_with_all = ["config", "checkpoint"])]
        preset: Option<String>,
        #[arg(long, value_enum)]
        ablate: Option<Ablate>,
    },
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. }
            | Error::Decode { .. }
            | Error::Unsupported(_)
            | Error::Dataset { .. }
            | Error::Shape { .. } => 1,
            Error::Config(_) | Error::ConfigLine { .. } | Error::Checkpoint(_) | Error::ManifestMismatch(_) => 2,
            Error::NonFinite { .. } | Error::Autodiff(_) => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("HDT_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure {
        code: 2,
        message: format!("HDT_THREADS must be a positive integer, got '{value}'"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure {
            code: 1,
            message: format!("starting {n} worker threads: {e}"),
        })
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Fuse {
            input,
            checkpoint,
            output,
            tonemapped,
            config,
        } => commands::fuse(&input, &checkpoint, &output, tonemapped.as_deref(), config.as_deref()),
        Command::Train {
            data,
            synthetic,
            config,
            out,
            ablate,
            resume,
        } => commands::train(data.as_deref(), synthetic, config.as_deref(), &out, ablate, resume),
        Command::Eval {
            data,
            checkpoint,
            json,
            config,
        } => commands::eval(&data, &checkpoint, json, config.as_deref()),
        Command::Gradcheck { ops, seed, seeds, .. } => commands::gradcheck(&ops, seed, seeds),
        Command::Inspect {
            config,
            checkpoint,
            preset,
            ablate,
        } => commands::inspect(config.as_deref(), checkpoint.as_deref(), preset.as_deref(), ablate),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
