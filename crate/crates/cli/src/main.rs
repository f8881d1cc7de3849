use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lyapcert::frontend::{run_command, Report, SystemConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    Linear,
    CertifyLocal,
    Converse,
    Averaging,
    Timescales,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Linear => "linear",
            Command::CertifyLocal => "certify-local",
            Command::Converse => "converse",
            Command::Averaging => "averaging",
            Command::Timescales => "timescales",
        }
    }
}

/// Certify stability and convergence rates of discrete-time systems.
#[derive(Debug, Parser)]
#[command(name = "lyapcert", version)]
struct Cli {
    command: Command,
    /// JSON system configuration.
    #[arg(long)]
    config: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Omit the timestamp so reports are byte-reproducible.
    #[arg(long)]
    no_timestamp: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command.name();
    let mut report = match SystemConfig::load(&cli.config) {
        Ok(cfg) => run_command(&cfg, command, cli.seed),
        Err(e) => {
            let mut r = Report::new(command, "", cli.seed.unwrap_or(0));
            r.fail_with(&e);
            r
        }
    };
    if !cli.no_timestamp {
        report.stamp_now();
    }
    let text = report.to_json();
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                eprintln!("lyapcert: cannot write {}: {e}", path.display());
                return ExitCode::from(1);
            }
        }
        None => print!("{text}"),
    }
    if let Some(e) = &report.error {
        eprintln!("lyapcert: {e}");
    }
    ExitCode::from(report.status.exit_code() as u8)
}
