use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use navsim_cli::{cmd_allocate, cmd_compare, cmd_run, cmd_validate, RunOptions};

/// Deterministic desk-scale simulator for network-assisted adaptive video
/// streaming: validate scenarios, run simulations, compare heuristics
/// against the exact oracle, and solve standalone fairness allocations.
#[derive(Parser)]
#[command(name = "navsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and cross-check a scenario bundle, reporting every problem.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run the simulator and write summary.json / per_client.csv /
    /// per_slot.csv into the output directory.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: scenario's out_dir or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario policy preset.
        #[arg(long)]
        policy: Option<String>,
        /// Override the number of slots.
        #[arg(long)]
        slots: Option<u64>,
        /// Run this many consecutive seeds in parallel, one subdirectory each.
        #[arg(long, default_value_t = 1)]
        jobs: u32,
    },
    /// Score heuristics against the joint oracle on one snapshot (NOV/ETV).
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated preset names.
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        /// Joint-oracle enumeration limit.
        #[arg(long)]
        limit: Option<u128>,
        /// Size of the benchmark instance.
        #[arg(long, default_value_t = 4)]
        requests: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve a standalone max-min fairness allocation from a demands file.
    Allocate {
        #[arg(long)]
        demands: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("NAVSIM_LOG")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Run {
            scenario,
            seed,
            out,
            policy,
            slots,
            jobs,
        } => cmd_run(
            &scenario,
            &RunOptions {
                seed,
                slots,
                policy,
                out,
                jobs,
            },
        ),
        Command::Compare {
            scenario,
            policies,
            limit,
            requests,
            seed,
        } => cmd_compare(&scenario, &policies, limit, requests, seed),
        Command::Allocate { demands } => cmd_allocate(&demands),
    };
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
