//! Command-line front end: `train`, `eval`, `sample` and `grid`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_eval, cmd_grid, cmd_sample, cmd_train};
pub use config::RunConfig;

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "trajflow", version, about = "Occupancy-density forecasting for moving agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint and loss trace.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample-based metrics on a data split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Samples for minADE and minFDE.
        #[arg(long)]
        n_best_of: Option<usize>,
    },
    /// Draw trajectories for test windows.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Candidates per step.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Density rasters and the fused occupancy grid for one test window.
    Grid {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        oversample: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Version(_) | Error::Contract(_) => EXIT_CONFIG,
        Error::Divergence { .. } | Error::Numeric(_) | Error::Nonconvergence { .. } => EXIT_DIVERGENCE,
        Error::Format(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Degenerate(_)
        | Error::Dimension { .. }
        | Error::Domain(_)
        | Error::Range { .. } => EXIT_DATA,
    }
}

fn configure(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn recheck(cfg: RunConfig) -> Result<RunConfig> {
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Train { common, epochs } => {
            let mut cfg = configure(&common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let cfg = recheck(cfg)?;
            let out = cmd_train(&cfg)?;
            let last = out.report.epoch_losses.last().map_or("n/a".into(), |l| format!("{l:.4}"));
            Ok(format!(
                "trained {} epochs ({} steps), final loss {last}, checkpoint {}",
                out.report.epoch_losses.len(),
                out.report.steps,
                out.checkpoint.display()
            ))
        }
        Command::Eval {
            common,
            checkpoint,
            n_best_of,
        } => {
            let mut cfg = configure(&common)?;
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            if let Some(n) = n_best_of {
                cfg.eval.n_best_of = n;
            }
            let rows = cmd_eval(&recheck(cfg)?)?;
            Ok(rows
                .iter()
                .map(|r| format!("{} {:.4}", r.metric, r.value))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Sample {
            common,
            checkpoint,
            k,
            n_samples,
        } => {
            let mut cfg = configure(&common)?;
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            if let Some(k) = k {
                cfg.sample.k = k;
            }
            if let Some(n) = n_samples {
                cfg.sample.n_samples = n;
            }
            let cfg = recheck(cfg)?;
            let csv = cmd_sample(&cfg)?;
            Ok(format!(
                "wrote {} sample rows to {}",
                csv.lines().count() - 1,
                cfg.out_dir.join(commands::SAMPLES).display()
            ))
        }
        Command::Grid {
            common,
            checkpoint,
            window,
            oversample,
        } => {
            let mut cfg = configure(&common)?;
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            if let Some(w) = window {
                cfg.grid.window = w;
            }
            if let Some(o) = oversample {
                cfg.grid.oversample = o;
            }
            let files = cmd_grid(&recheck(cfg)?)?;
            Ok(files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n"))
        }
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
