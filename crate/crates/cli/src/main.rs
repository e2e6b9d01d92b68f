use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mfe_cli::{exit_code, load_config, run, CriterionKind, Mode, Overrides};

#[derive(Parser)]
#[command(name = "mfe", version, about = "Solve and verify mean-field equilibria")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a game configuration and write report.json and trace.csv.
    Solve {
        config: PathBuf,
        #[arg(long, value_enum)]
        criterion: Option<CriterionKind>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        beta: Option<f64>,
        /// Outer tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Outer iteration limit.
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// `fp` or `fixed:F`.
        #[arg(long)]
        damping: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Solve { config, criterion, mode, beta, tol, max_iter, horizon, damping, seed, out } = cli.command;
    let overrides = Overrides { criterion, mode, beta, tol, max_iter, horizon, damping, seed, out };

    let mut cfg = match load_config(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    overrides.apply(&mut cfg);
    if let Err(e) = cfg.resolve() {
        eprintln!("error: {}: {e:#}", config.display());
        return ExitCode::from(1);
    }

    let start = Instant::now();
    let report = run(&cfg);
    let elapsed = start.elapsed();
    let paths = match report.write(&cfg.output.dir) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let code = exit_code(&report);
    match &report.error {
        Some(e) => eprintln!("error: {e}"),
        None => eprintln!(
            "{} after {} iterations, exploitability {:e}",
            if report.converged { "converged" } else { "not converged" },
            report.iterations,
            report.exploitability.unwrap_or(f64::NAN),
        ),
    }
    eprintln!("wrote {} and {} in {:.3}s", paths.0.display(), paths.1.display(), elapsed.as_secs_f64());
    ExitCode::from(code as u8)
}
