use std::path::PathBuf;
use std::process::ExitCode;

use anikern::checks::{self, Check, Status};
use anikern::config::{self, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anikern", version, about = "Anisotropic heat kernel bounds: numerical checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Positive-definiteness and homogeneity of the symbol.
    SymbolCheck(Common),
    /// Legendre transform on the grid against an oracle.
    Lf(Common),
    /// Heat kernels at the configured times, as CSV and binary cache.
    Kernel(Common),
    /// Off-diagonal bound fit on constant-coefficient kernels.
    FitBound(Common),
    /// Assemble the variable-coefficient operator and fit its kernel column.
    VcRun(Common),
    /// Form comparison, twisted perturbation and power-form checks.
    Hyp(Common),
    /// Validate the configuration and print derived quantities; writes nothing.
    Validate(Common),
    /// Every check listed in the configuration.
    Run(Common),
}

fn subcommand_checks(cmd: &Command) -> Option<Vec<Check>> {
    use Check::*;
    match cmd {
        Command::SymbolCheck(_) => Some(vec![PositiveDefinite, Homogeneity]),
        Command::Lf(_) => Some(vec![LfOracle, LfHomogeneity]),
        Command::Kernel(_) => Some(vec![Kernel, Mass]),
        Command::FitBound(_) => Some(vec![BoundFit]),
        Command::VcRun(_) => Some(vec![ExportOperator, KernelColumnFit]),
        Command::Hyp(_) => Some(vec![Hypothesis1, Hypothesis2, TwistedSgNorm, TwistedFormLower, Hypothesis3]),
        Command::Validate(_) | Command::Run(_) => None,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::SymbolCheck(c)
        | Command::Lf(c)
        | Command::Kernel(c)
        | Command::FitBound(c)
        | Command::VcRun(c)
        | Command::Hyp(c)
        | Command::Validate(c)
        | Command::Run(c) => c,
    };
    let overrides = Overrides { seed: common.seed, out: common.out.clone(), checks: subcommand_checks(&cli.command) };
    let exp = match config::load(&common.config, &overrides) {
        Ok(e) => e,
        Err(issues) => {
            for i in issues {
                eprintln!("config error: {}: {}", i.field, i.message);
            }
            return ExitCode::from(2);
        }
    };
    if let Command::Validate(_) = cli.command {
        match serde_json::to_string_pretty(&exp.diagnostics()) {
            Ok(s) => println!("{s}"),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
        return ExitCode::SUCCESS;
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = common.jobs {
        builder = builder.num_threads(j);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| checks::run(&exp)) {
        Ok(summary) => {
            for (name, status) in &summary.checks {
                println!("{:<8} {name}", format!("{status:?}").to_uppercase());
            }
            if summary.checks.iter().all(|(_, s)| *s == Status::Pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
