// SPDX-License-Identifier: Apache-2.0

//! `headcount`: data generation, training grids, constructive builds and
//! their verifiers, analysis, and the collision probe.
//!
//! Exit status: 0 on success, 1 on a failed run or a violated bound, 2 on a
//! usage error. Failures print one JSON line `{"error": {...}}` on stderr.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use manifest::VERSION;

#[derive(Debug, Parser)]
#[command(name = "headcount", version = VERSION, about = "Multi-head transformer retrieval lab")]
struct Cli {
    /// Output root.
    #[arg(long, global = true, env = "HEADCOUNT_OUT", default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Construction {
    Softmin,
    SoftminModel,
    ReluMax,
    ReluMin,
    Memorization,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Sample the train/validation splits of every length in the config.
    GenData(ConfigArgs),

    /// Train one grid cell and save its record and checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Heads (default: first in the config).
        #[arg(long)]
        h: Option<usize>,
        #[arg(long, alias = "T")]
        length: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },

    /// Run (or resume) the full grid and write the per-cell summary.
    Grid(ConfigArgs),

    /// Build a construction and save it as JSON.
    Construct {
        #[arg(long, value_enum)]
        construction: Construction,
        #[command(flatten)]
        params: BuildArgs,
    },

    /// Build a construction and check its bound on random inputs. Exits 1 on
    /// any violation.
    Verify {
        #[arg(long, value_enum)]
        construction: Construction,
        #[command(flatten)]
        params: BuildArgs,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Transition, reversal and scaling analysis of grid results or of an
    /// `h,T,err` table.
    Analyze {
        #[arg(long, conflicts_with = "table", required_unless_present = "table")]
        results: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Hidden width to analyze (default: widest present).
        #[arg(long)]
        hidden: Option<usize>,
        /// Head counts left out of the scaling fit.
        #[arg(long, value_delimiter = ',')]
        drop: Vec<usize>,
        #[arg(long, default_value_t = 10.0)]
        drop_factor: f64,
        #[arg(long, default_value_t = 3.0)]
        growth_ratio: f64,
        #[arg(long, default_value_t = 0.0)]
        reversal_threshold: f64,
    },

    /// Search for inputs with close post-attention vectors but distant targets.
    Collide {
        /// Trained checkpoint; probed on the synthetic task of `--data-seed`.
        #[arg(long, conflicts_with = "toy", required_unless_present = "toy")]
        checkpoint: Option<PathBuf>,
        /// One-head softmin model of the min feature, probed on the toy target.
        #[arg(long)]
        toy: bool,
        #[arg(long, alias = "T")]
        length: Option<usize>,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
struct BuildArgs {
    /// Sequence length.
    #[arg(long = "T", alias = "length", default_value_t = 8)]
    seq_len: usize,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    /// Fixed β for the softmin constructions instead of the ε rule.
    #[arg(long)]
    beta: Option<f64>,
}

/// Bad invocation: exit 2 with usage text.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A construction bound failed on some input.
#[derive(Debug)]
struct Violation(String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

fn error_line(kind: &str, message: &str) {
    eprintln!(
        "{}",
        serde_json::json!({ "error": { "kind": kind, "message": message } })
    );
}

fn kind_of(err: &anyhow::Error) -> &'static str {
    use headcount_core::Error as E;
    if err.is::<Violation>() {
        return "bound_violation";
    }
    match err.downcast_ref::<E>() {
        Some(E::InvalidInput(_)) => "invalid_input",
        Some(E::State(_)) => "state",
        Some(E::Construction(_)) => "construction",
        Some(E::Io(_)) => "io",
        Some(E::Json(_)) => "json",
        Some(E::Config(_)) => "config",
        Some(E::Csv(_)) => "csv",
        None => "error",
    }
}

fn subcommand_usage(name: &str) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match cmd.find_subcommand_mut(name) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = !matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            if !usage {
                return ExitCode::SUCCESS;
            }
            error_line("usage", &e.kind().to_string());
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error_line("state", &format!("thread pool: {e}"));
            return ExitCode::FAILURE;
        }
    }

    let name = subcommand_name(&cli.command);
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(u) = err.downcast_ref::<UsageError>() {
                eprintln!("{}", subcommand_usage(name));
                error_line("usage", &u.0);
                return ExitCode::from(2);
            }
            error_line(kind_of(&err), &format!("{err:#}"));
            ExitCode::FAILURE
        }
    }
}

fn subcommand_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::GenData(_) => "gen-data",
        Cmd::Train { .. } => "train",
        Cmd::Grid(_) => "grid",
        Cmd::Construct { .. } => "construct",
        Cmd::Verify { .. } => "verify",
        Cmd::Analyze { .. } => "analyze",
        Cmd::Collide { .. } => "collide",
    }
}
