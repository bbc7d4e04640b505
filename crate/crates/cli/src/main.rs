//! `spikeslab` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Context, SamplerOutput};
use spikeslab::Result;

#[derive(Parser)]
#[command(name = "spikeslab", version, about = "Spike-and-slab posterior sampling experiments")]
struct Cli {
    /// TOML configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for chains and path ranges. Output does not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataOut {
    /// Dataset written by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact posterior over all models by enumeration.
    Oracle(DataOut),
    /// Collapsed Gibbs sampler.
    Gibbs(DataOut),
    /// Stochastic localization sampler.
    Sloc(DataOut),
    /// Gibbs sampler for the random-design posterior.
    RdGibbs(DataOut),
    /// Pólya-Gamma Gibbs sampler for logistic regression.
    Logistic(DataOut),
    /// Compare sampler output against an oracle table.
    Diagnose {
        #[arg(long)]
        table: PathBuf,
        /// Joint states written by a Gibbs-type sampler.
        #[arg(long, conflicts_with = "draws", required_unless_present = "draws")]
        samples: Option<PathBuf>,
        /// Coefficient vectors written by `sloc`.
        #[arg(long)]
        draws: Option<PathBuf>,
        /// Needed for the prior threshold on `--draws`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coherence, restricted eigenvalue and signal strength of a design.
    DesignStats(DataOut),
    /// Timing of Gibbs sweeps and drift evaluations.
    Bench {
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Oracle(_) => "oracle",
            Command::Gibbs(_) => "gibbs",
            Command::Sloc(_) => "sloc",
            Command::RdGibbs(_) => "rd-gibbs",
            Command::Logistic(_) => "logistic",
            Command::Diagnose { .. } => "diagnose",
            Command::DesignStats(_) => "design-stats",
            Command::Bench { .. } => "bench",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    let loaded = config::load(&text)?;
    let ctx = Context { config: loaded.config, hash: loaded.hash, command: cli.command.name(), jobs: cli.jobs.max(1) };
    match &cli.command {
        Command::Generate { out } => commands::generate(&ctx, out),
        Command::Oracle(a) => commands::oracle(&ctx, &a.data, &a.out),
        Command::Gibbs(a) => commands::gibbs(&ctx, &a.data, &a.out),
        Command::Sloc(a) => commands::sloc(&ctx, &a.data, &a.out),
        Command::RdGibbs(a) => commands::rd_gibbs(&ctx, &a.data, &a.out),
        Command::Logistic(a) => commands::logistic(&ctx, &a.data, &a.out),
        Command::Diagnose { table, samples, draws, data, out } => {
            let input = match (samples, draws) {
                (Some(s), _) => SamplerOutput::States(s),
                (None, Some(d)) => SamplerOutput::Vectors(d),
                (None, None) => unreachable!("clap requires one of --samples and --draws"),
            };
            commands::diagnose(&ctx, table, input, data.as_deref(), out)
        }
        Command::DesignStats(a) => commands::design_stats(&ctx, &a.data, &a.out),
        Command::Bench { out } => commands::bench(&ctx, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
