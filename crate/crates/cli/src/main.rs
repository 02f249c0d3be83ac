//! `lyapcert`: batch front end for almost-Lyapunov certification.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

mod config;
mod error;
mod pipeline;
mod plots;

use config::RunConfig;
use error::CliError;
use pipeline::{Mode, Options};

#[derive(Debug, Parser)]
#[command(name = "lyapcert", version, about = "Certify convergence with almost-Lyapunov functions")]
struct Args {
    /// Pipeline to run.
    #[arg(value_enum)]
    mode: Mode,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Base directory for relative output paths.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print only errors.
    #[arg(long)]
    quiet: bool,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("LYAPCERT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Input {
        field: "LYAPCERT_THREADS".into(),
        message: format!("must be a positive integer, got `{raw}`"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::stage("thread pool", e))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = init_threads()
        .and_then(|_| RunConfig::load(&args.config))
        .and_then(|cfg| {
            pipeline::run(
                cfg,
                &Options {
                    mode: args.mode,
                    seed: args.seed,
                    out: args.out.clone(),
                },
            )
        });
    match result {
        Ok(outcome) => {
            let r = &outcome.report;
            if !args.quiet {
                for line in &r.summary {
                    println!("{line}");
                }
                for note in &r.notes {
                    eprintln!("note: {note}");
                }
                println!("report written to {}", outcome.report_path.display());
                println!("verdict: {:?}", r.verdict);
            }
            ExitCode::from(r.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
