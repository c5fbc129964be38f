use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use pemcell::cli_io::run::{exit_code_for, EXIT_CONFIG};
use pemcell::cli_io::{parse_config, run_subcommand, Subcommand};

/// Finite-element PEM fuel cell model with an explicit-constant existence ledger.
#[derive(Parser)]
#[command(name = "pemcell", version)]
enum Cli {
    /// Sample every coefficient law against its declared bounds.
    CheckHypotheses(Common),
    /// Evaluate the explicit constants and the smallness verdict (no PDE solve).
    Ledger(Common),
    /// Run the relaxed Picard iteration and write the fields.
    Simulate(Common),
    /// Certify the functional inequalities on random and adversarial fields.
    VerifyInequalities(Common),
    /// Manufactured-solution order study of the linear solves.
    ConvergenceStudy(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with status 2 when the subcommand's check fails.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, args) = match cli {
        Cli::CheckHypotheses(a) => (Subcommand::CheckHypotheses, a),
        Cli::Ledger(a) => (Subcommand::Ledger, a),
        Cli::Simulate(a) => (Subcommand::Simulate, a),
        Cli::VerifyInequalities(a) => (Subcommand::VerifyInequalities, a),
        Cli::ConvergenceStudy(a) => (Subcommand::ConvergenceStudy, a),
    };
    let mut cfg = match parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output.dir = o.to_string_lossy().into_owned();
    }
    let out = PathBuf::from(&cfg.output.dir);
    match run_subcommand(sub, &cfg, &out, args.strict) {
        Ok(o) => {
            println!(
                "{}: {} ({})",
                sub.name(),
                if o.report.passed { "passed" } else { "failed" },
                out.join("report.json").display()
            );
            ExitCode::from(o.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
