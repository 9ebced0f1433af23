//! `essgan`: sampling masks, acquisition simulation, training, evaluation and
//! single-slice reconstruction.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure. A failed
//! command that was writing into an output directory leaves a `FAILED` file
//! there holding the diagnostic.

mod commands;
mod config;
mod fail;
mod manifest;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use essgan::data::PhantomKind;
use essgan::MaskKind;

use commands::{noise_from, EvalArgs, TrainArgs};
use fail::{CliResult, Fail, EXIT_USAGE};

/// Name of the variable that sets the worker thread count.
const THREADS_VAR: &str = "ESSGAN_THREADS";
const FAILED_MARKER: &str = "FAILED";

#[derive(Parser)]
#[command(
    name = "essgan",
    version,
    about = "Compressed-sensing MRI reconstruction with a strengthened GAN"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct NoiseArgs {
    /// Standard deviation of complex k-space noise (0 disables it).
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_mean: f64,
    /// Base seed; each slice draws from its own stream keyed by its id.
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sampling mask (PNG plus JSON sidecar).
    Mask {
        #[arg(long)]
        kind: MaskKind,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic phantom dataset in the train/valid/test layout.
    Phantoms {
        #[arg(long)]
        kind: PhantomKind,
        #[arg(long)]
        size: usize,
        /// Train, valid and test counts.
        #[arg(long, value_delimiter = ',', default_values_t = [48, 8, 8])]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Undersample every slice under a directory and zero-fill it.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory.
    Train {
        /// TOML configuration; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave wall-clock fields out of the run manifest.
        #[arg(long)]
        deterministic: bool,
        /// Continue from `<out>/last.ckpt`; only `max_epochs` may change.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        /// Also write error maps and zoomed crops.
        #[arg(long)]
        error_maps: bool,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
    },
    /// Reconstruct a single slice.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recheck the digests recorded in a run manifest (file or run directory).
    Verify { manifest: PathBuf },
}

impl Command {
    fn out_dir(&self) -> Option<&Path> {
        match self {
            Command::Mask { .. } | Command::Verify { .. } => None,
            Command::Phantoms { out, .. }
            | Command::Simulate { out, .. }
            | Command::Train { out, .. }
            | Command::Eval { out, .. }
            | Command::Reconstruct { out, .. } => Some(out),
        }
    }
}

/// The computation is single-threaded, so only 1 is accepted.
fn thread_count() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(1) => Ok(1),
            _ => Err(Fail::Usage(format!("{THREADS_VAR}={v}: only 1 thread is supported"))),
        },
    }
}

fn run(command: Command) -> CliResult<()> {
    let threads = thread_count()?;
    match command {
        Command::Mask {
            kind,
            rate,
            size,
            seed,
            out,
        } => commands::mask(kind, rate, size, seed, &out),
        Command::Phantoms {
            kind,
            size,
            counts,
            seed,
            out,
        } => {
            let &[tr, va, te] = counts.as_slice() else {
                return Err(Fail::Usage(format!(
                    "--counts needs three values, got {}",
                    counts.len()
                )));
            };
            commands::phantoms(kind, size, [tr, va, te], seed, &out)
        }
        Command::Simulate {
            input,
            mask,
            noise,
            out,
        } => {
            let n = noise_from(noise.noise_sigma, noise.noise_mean, noise.noise_seed)?;
            commands::simulate(&input, &mask, n, &out)
        }
        Command::Train {
            config,
            data,
            out,
            deterministic,
            resume,
        } => commands::train_cmd(TrainArgs {
            config: config.as_deref(),
            data: &data,
            out: &out,
            deterministic,
            resume,
            threads,
        }),
        Command::Eval {
            checkpoint,
            data,
            mask,
            out,
            noise,
            error_maps,
            batch_size,
        } => {
            if batch_size == 0 {
                return Err(Fail::Usage("--batch-size must be positive".into()));
            }
            commands::eval(EvalArgs {
                checkpoint: &checkpoint,
                data: &data,
                mask: &mask,
                out: &out,
                noise: noise_from(noise.noise_sigma, noise.noise_mean, noise.noise_seed)?,
                error_maps,
                batch_size,
            })
        }
        Command::Reconstruct {
            checkpoint,
            image,
            mask,
            noise,
            out,
        } => {
            let n = noise_from(noise.noise_sigma, noise.noise_mean, noise.noise_seed)?;
            commands::reconstruct(&checkpoint, &image, &mask, n, &out)
        }
        Command::Verify { manifest } => commands::verify(&manifest),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let line = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", line.trim());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let out = cli.command.out_dir().map(Path::to_path_buf);
    if let Some(marker) = out.as_ref().map(|d| d.join(FAILED_MARKER)).filter(|m| m.exists()) {
        let _ = std::fs::remove_file(marker);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = format!("error: {f}");
            eprintln!("{msg}");
            if let Some(dir) = out.filter(|d| d.is_dir()) {
                let _ = std::fs::write(dir.join(FAILED_MARKER), msg + "\n");
            }
            ExitCode::from(f.code())
        }
    }
}
