//! Command-line front end for the whole pipeline.
//!
//! Every subcommand reads a [`RunConfig`], does its stage's work, writes its
//! artifacts below `output`, and prints one JSON summary line on stdout.
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or config
//! errors.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Layout;
pub use config::{
    apply_override, load_config, CoresetSection, DataSection, DistillSection, EvalSection, ModelsSection, RunConfig,
    TeacherSection,
};

#[derive(Debug, Parser)]
#[command(name = "csi-distill", version, about = "Trajectory-matching dataset distillation for CSI data")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one config value, e.g. `--set distill.iterations=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Worker threads for independent jobs.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate (or import) and preprocess the train/test splits.
    GenData,
    /// Train teacher networks and store their trajectories.
    Buffer,
    /// Distill synthetic sets from the expert buffer.
    Distill,
    /// Select coreset baselines from the training split.
    Coreset,
    /// Train fresh students on every available small set.
    Eval,
    /// Evaluate distilled sets across student architectures.
    CrossEval,
    /// Render the evaluation CSVs as text tables.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Buffer => "buffer",
            Command::Distill => "distill",
            Command::Coreset => "coreset",
            Command::Eval => "eval",
            Command::CrossEval => "cross-eval",
            Command::Report => "report",
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_with<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                2
            } else {
                let _ = write!(out, "{}", e.render());
                0
            };
            return code;
        }
    };
    if cli.jobs == 0 {
        let _ = writeln!(err, "error: --jobs must be at least 1");
        return 2;
    }
    let cfg = match load_config(cli.config.as_deref(), &cli.overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    match pool.install(|| commands::execute(cli.command, &cfg)) {
        Ok(summary) => {
            let _ = writeln!(out, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {} failed: {e}", cli.command.name());
            1
        }
    }
}

/// Runs with the process arguments and standard streams.
pub fn run() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}
