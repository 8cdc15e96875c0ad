//! Command-line front end: experiment configs, base ingestion and exports.

// Negated float comparisons deliberately treat NaN as invalid; index
// loops mirror the math they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{OptimizeArgs, SimulateArgs};
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "aqua", version, about = "Swimmer shape and controller co-design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interpolate the bases and write density, mask, surface and actuators.
    Interpolate {
        #[command(flatten)]
        common: Common,
        /// Interpolation weights, e.g. `0.5,0.5`; uniform when absent.
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<String>,
    },
    /// Simulate one design and write its trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<String>,
        /// Design written by `optimize` (shape logits and controller).
        #[arg(long)]
        design: Option<PathBuf>,
        /// MLP weight file.
        #[arg(long)]
        controller: Option<PathBuf>,
        /// Write every n-th frame as OBJ.
        #[arg(long, default_value_t = 10)]
        frame_every: usize,
    },
    /// Compare adjoint gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Co-optimize shape and controller.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Sweep the speed/efficiency weight and collect the Pareto gamut.
    Pareto {
        #[command(flatten)]
        common: Common,
        /// Parallel runs; all cores when absent.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

pub fn execute(cmd: Command) -> Result<String, CliError> {
    let alpha = |a: &Option<String>| a.as_deref().map(commands::parse_alpha).transpose();
    match cmd {
        Command::Interpolate { common, alpha: a } => commands::interpolate(load(&common)?, alpha(&a)?),
        Command::Simulate {
            common,
            alpha: a,
            design,
            controller,
            frame_every,
        } => {
            let args = SimulateArgs {
                alpha: alpha(&a)?,
                design,
                controller,
                frame_every,
            };
            commands::simulate(load(&common)?, &args)
        }
        Command::Gradcheck {
            common,
            corrupt_adjoint,
        } => commands::gradcheck(load(&common)?, corrupt_adjoint),
        Command::Optimize {
            common,
            resume,
            stop_after,
        } => commands::optimize(load(&common)?, OptimizeArgs { resume, stop_after }),
        Command::Pareto { common, workers } => {
            if workers == Some(0) {
                return Err(CliError::Config("--workers must be positive".into()));
            }
            commands::pareto(load(&common)?, workers)
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("AQUA_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(report) => {
            println!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
