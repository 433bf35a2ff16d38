mod commands;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dfsim_core::report::DEFAULT_TOP_K;

#[derive(Parser)]
#[command(
    name = "dfsim",
    version,
    about = "Replay one training iteration of a dataflow graph from offline op profiles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Inputs {
    /// Unified graph document.
    #[arg(long)]
    pub graph: PathBuf,
    /// Profile database; repeat to merge, later files win on duplicate keys.
    #[arg(long = "profiles")]
    pub profiles: Vec<PathBuf>,
    /// Strategy config. Defaults to one replica and no overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a graph document; findings go to stderr.
    Validate {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Print the resolved duration of every node as JSON.
    Estimate {
        #[command(flatten)]
        inputs: Inputs,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate and write trace.json, summary.txt, summary.csv and manifest.json.
    Simulate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
    },
    /// Fit and print the linear cost model of one op type.
    Fit {
        #[arg(long = "profiles", required = true)]
        profiles: Vec<PathBuf>,
        #[arg(long)]
        op: String,
        #[arg(long)]
        hardware: String,
    },
    /// Generate a synthetic graph and profile database from a synth spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        /// Replaces the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated profile grid; defaults to powers of two up to 32768.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative error of simulated against measured iteration times.
    Compare {
        /// CSV with columns model,measured_us.
        #[arg(long)]
        measured: PathBuf,
        /// CSV with columns model,simulated_us.
        #[arg(long)]
        simulated: PathBuf,
    },
    /// Simulate one graph under several strategy configs.
    Sweep {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long = "profiles")]
        profiles: Vec<PathBuf>,
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Also write the results table to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DFSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { graph } => commands::validate(&graph),
        Command::Estimate { inputs, out } => commands::estimate(&inputs, out.as_deref()),
        Command::Simulate { inputs, out, top_k } => commands::simulate(&inputs, &out, top_k),
        Command::Fit { profiles, op, hardware } => commands::fit(&profiles, &op, &hardware),
        Command::Gen { spec, seed, grid, out } => commands::gen(&spec, seed, grid, &out),
        Command::Compare { measured, simulated } => commands::compare(&measured, &simulated),
        Command::Sweep {
            graph,
            profiles,
            configs,
            jobs,
            out,
        } => commands::sweep(&graph, &profiles, &configs, jobs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
