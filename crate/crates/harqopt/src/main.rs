use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use harqopt::error::{exit, AppError};
use harqopt::{load_config, run, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Analyze,
    Optimize,
    Simulate,
    Validate,
    Sweep,
}

/// HARQ rate and feedback-threshold optimization under unreliable feedback.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Monte Carlo seed (overrides `mc.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (overrides `output_path`); standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HARQOPT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::INPUT } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("harqopt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<(), AppError> {
    let mut cfg = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if cli.out.is_some() {
        cfg.output_path = cli.out;
    }
    let command = match cli.command {
        Cmd::Analyze => Command::Analyze,
        Cmd::Optimize => Command::Optimize,
        Cmd::Simulate => Command::Simulate,
        Cmd::Validate => Command::Validate,
        Cmd::Sweep => Command::Sweep,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(AppError::field("--workers", "must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| AppError::Pool(e.to_string()))?;
    pool.install(|| run(command, &cfg))
}
