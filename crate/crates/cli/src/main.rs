use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qsmooth_cli::{error_json, load_config_with, run, Command, Overrides};

/// Simulate, filter, smooth and retrodict continuously monitored quantum
/// systems.
#[derive(Debug, Parser)]
#[command(name = "qsmooth", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the experiment's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long)]
    ensemble: Option<usize>,
    /// Measurement record CSV.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Revealed intervention outcomes JSON.
    #[arg(long)]
    outcomes: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        command: Some(cli.command),
        out: cli.out,
        seed: cli.seed,
        ensemble: cli.ensemble,
        record: cli.record,
        outcomes: cli.outcomes,
    };
    let result = load_config_with(&cli.config, &overrides).and_then(|config| run(&config));
    match result {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(report) = &summary.report {
                for c in &report.checks {
                    let status = serde_json::to_value(c.status).unwrap_or_default();
                    let measured = match (c.measured, c.threshold) {
                        (Some(m), Some(t)) => format!("{m:.3e} (threshold {t:.1e}); "),
                        _ => String::new(),
                    };
                    println!("[{}] {}: {measured}{}", status.as_str().unwrap_or("?").to_uppercase(), c.name, c.detail);
                }
            }
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            if summary.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
