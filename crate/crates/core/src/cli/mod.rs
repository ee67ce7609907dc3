//! Command-line front end: declarative JSON configs in, CSV/JSON artifacts and a manifest out.
//!
//! Exit codes: 0 pass, 1 runtime error, 2 configuration error, 3 training
//! failure, 4 tolerance failure (artifacts are still written).

mod commands;
mod config;
mod output;

pub use commands::{
    cmd_attack, cmd_conflict, cmd_fit, cmd_scaling, cmd_theory, cmd_zoo_build, obtain_zoo, read_points, scaling_checks,
    scaling_config, spread_ids, with_workers, Overrides, Status,
};
pub use config::{
    AttackRunSection, AttackTolerances, ConflictSection, ConflictTolerances, RunConfig, ScalingSection,
    ScalingTolerances, CONFIG_FORMAT_VERSION,
};
pub use output::OutputDir;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_TOLERANCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "advscale", version, about = "Ensemble-attack scaling laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Args)]
pub struct Flags {
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the surrogate, held-out and adversarially trained pools.
    ZooBuild(Common),
    /// Attack a set of test images with one ensemble.
    Attack(Common),
    /// Sweep ensemble sizes and fit ASR against ln T.
    Scaling(Common),
    /// Monte Carlo check of ensemble-minimizer asymptotics.
    Theory(Common),
    /// Aggregated update magnitude at two ensemble sizes.
    Conflict(Common),
    /// Refit ASR = α ln T + C on an exported points CSV.
    Fit {
        /// CSV with a `T` column and an `asr_mean`, `asr`, `value` or `y` column.
        csv: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            workers: self.workers,
        }
    }
}

/// Process exit code for a command error.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        Error::TrainingDiverged { .. } => EXIT_TRAINING,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` and runs the selected command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let outcome = match &cli.command {
        Command::ZooBuild(c) => cmd_zoo_build(&c.config, &c.flags.overrides()),
        Command::Attack(c) => cmd_attack(&c.config, &c.flags.overrides()),
        Command::Scaling(c) => cmd_scaling(&c.config, &c.flags.overrides()),
        Command::Theory(c) => cmd_theory(&c.config, &c.flags.overrides()),
        Command::Conflict(c) => cmd_conflict(&c.config, &c.flags.overrides()),
        Command::Fit { csv, flags } => cmd_fit(csv, &flags.overrides()).map(|(status, fit)| {
            println!(
                "alpha = {:.12}\nC = {:.12}\nR2 = {:.12}\nn = {}",
                fit.scaling_alpha, fit.intercept, fit.r_squared, fit.n_points
            );
            status
        }),
    };
    match outcome {
        Ok(Status::Pass) => EXIT_PASS,
        Ok(Status::ToleranceFailed) => {
            eprintln!("one or more tolerance checks failed; see the summary in the output directory");
            EXIT_TOLERANCE
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
