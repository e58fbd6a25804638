//! Configuration, CSV output and workflows of the `harqopt` command.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use config::{load_config, parse_config, RunConfig};
pub use error::AppError;

use output::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Optimize,
    Simulate,
    Validate,
    Sweep,
}

/// Where the optimize trace goes when the solution is written to `out`.
pub fn trace_path(out: &Path) -> PathBuf {
    out.with_extension("trace.csv")
}

fn write_table(table: &Table, out: Option<&Path>) -> Result<(), AppError> {
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            table.write(&mut w)?;
            w.flush()?;
        }
        None => table.write(std::io::stdout().lock())?,
    }
    Ok(())
}

/// Runs one workflow and writes its CSV output to `cfg.output_path` or
/// standard output.
pub fn run(command: Command, cfg: &RunConfig) -> Result<(), AppError> {
    let out = cfg.output_path.as_deref();
    match command {
        Command::Analyze => write_table(&commands::analyze(cfg)?, out),
        Command::Simulate => write_table(&commands::simulate(cfg)?, out),
        Command::Sweep => write_table(&commands::sweep(cfg)?, out),
        Command::Optimize => {
            let (solution, trace) = commands::optimize(cfg)?;
            write_table(&solution, out)?;
            match out {
                Some(p) => write_table(&trace, Some(&trace_path(p))),
                None => {
                    std::io::stdout().lock().write_all(b"\n")?;
                    write_table(&trace, None)
                }
            }
        }
        Command::Validate => {
            let (table, tripwire) = commands::validate(cfg)?;
            write_table(&table, out)?;
            tripwire.map_or(Ok(()), Err)
        }
    }
}
