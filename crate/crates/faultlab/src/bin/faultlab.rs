use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use faultlab::cli::{self, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "faultlab",
    version,
    about = "Bit-precise fault injection workbench for neural-network inference"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// SQLite store path; overrides the config file.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Campaign worker threads; overrides the config file.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Per-cell progress on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a zoo model and store its baseline accuracy.
    Train,
    /// Arm the configured injection list for one run.
    Inject,
    /// Run the fault-rate sweep campaign.
    Sweep,
    /// Run the overhead-vs-fault-count benchmark.
    Bench,
    /// Emit figure CSVs from an existing store.
    Report,
}

fn load_config(cli: &Cli) -> faultlab::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&Overrides {
        seed: cli.seed,
        store: cli.store.clone(),
        out: cli.out.clone(),
        workers: cli.workers,
        verbose: cli.verbose,
    });
    Ok(cfg)
}

fn run(cli: &Cli) -> faultlab::Result<serde_json::Value> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Train => cli::cmd_train(&cfg),
        Command::Inject => cli::cmd_inject(&cfg),
        Command::Sweep => cli::cmd_sweep(&cfg, cli.verbose),
        Command::Bench => cli::cmd_bench(&cfg),
        Command::Report => cli::cmd_report(&cfg.store_path(), &cfg.out_dir()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
