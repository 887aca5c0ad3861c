use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use suscept_cli::commands;

/// Bayesian network autocorrelation models with heterogeneous susceptibility.
#[derive(Debug, Parser)]
#[command(name = "suscept", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-actor network features of an edge list.
    Features {
        /// `src,dst[,weight]` edge list.
        edges: PathBuf,
        /// Output CSV.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        directed: bool,
    },
    /// Fit a model described by a config file.
    Fit { config: PathBuf },
    /// Run a simulation study for coverage and bias.
    Simulate { config: PathBuf },
    /// Compare egocentric subsamples of several sizes with the full network.
    EgoStudy { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().expect("thread pool is configured once");
    }
    let result = match &cli.command {
        Command::Features { edges, out, directed } => commands::features(edges, out, *directed),
        Command::Fit { config } => commands::fit(config),
        Command::Simulate { config } => commands::simulate(config),
        Command::EgoStudy { config } => commands::ego_study(config),
    };
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
