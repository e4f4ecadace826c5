//! Command line front end: dataset generation, iterative solves, network
//! training and evaluation, all driven by a flat `key = value` config.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "cg-invert", version, about = "Compound Gaussian inversion toolkit")]
pub struct Cli {
    /// Seed for every section that does not set its own.
    #[arg(long, global = true, env = "CG_INVERT_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for per-sample commands.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Write 0 in timing columns so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config entry; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise a measurement dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the sensing matrix as `row,col,value` triplets.
        #[arg(long)]
        export_matrix: bool,
    },
    /// Reconstruct every sample with the alternating least squares solver.
    Solve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the unrolled network.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, required_unless_present = "param_count")]
        data: Option<PathBuf>,
        #[arg(long, required_unless_present = "param_count")]
        out: Option<PathBuf>,
        /// Print the number of trainable parameters and exit.
        #[arg(long)]
        param_count: bool,
    },
    /// Run a trained network over a dataset.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit the solver's descent guarantees on a dataset.
    Diagnose {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one sample id.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Print the number of trainable network parameters.
    ParamCount {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Global options shared by every command.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub seed: u64,
    pub jobs: usize,
    pub timing: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    let opts = RunOptions {
        seed: cli.seed.unwrap_or(0),
        jobs: cli.jobs.max(1),
        timing: !cli.no_timing,
    };
    let load = |c: &ConfigArgs| config::RunConfig::load(c.config.as_deref(), &c.set, opts.seed);
    match cli.command {
        Command::GenData { cfg, out, export_matrix } => {
            commands::gen_data(&load(&cfg)?, &out, export_matrix)
        }
        Command::Solve { cfg, data, out } => commands::solve(&load(&cfg)?, &data, &out, opts),
        Command::Train {
            cfg,
            data,
            out,
            param_count,
        } => {
            let rc = load(&cfg)?;
            if param_count {
                return commands::param_count(&rc);
            }
            let (data, out) = (data.expect("required by clap"), out.expect("required by clap"));
            commands::train(&rc, &data, &out)
        }
        Command::Eval {
            cfg,
            data,
            checkpoint,
            out,
        } => commands::eval(&load(&cfg)?, &data, &checkpoint, &out, opts),
        Command::Diagnose { cfg, data, out, sample } => {
            commands::diagnose(&load(&cfg)?, &data, &out, sample, opts)
        }
        Command::ParamCount { cfg } => commands::param_count(&load(&cfg)?),
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
