//! `cplap <subcommand> --config <path> [overrides]`
//!
//! Exit status: 0 success, 1 I/O failure, 2 invalid config or refused
//! problem, 3 solver non-convergence, 4 invariant violation.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Kind, Overrides};

#[derive(Parser)]
#[command(
    name = "cplap",
    version,
    about = "Experiments on the complex p-Laplace system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one Dirichlet problem and dump the solution.
    Solve(Common),
    /// Seeded check of the flux structure inequalities.
    StructureTest(Common),
    /// Derivative of the solution in a complex coefficient parameter.
    Sensitivity(Common),
    /// Excess-decay fit and frozen-coefficient comparison.
    Regularity(Common),
    /// Manufactured-solution refinement study.
    ConvergenceStudy(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Cells per axis.
    #[arg(long)]
    cells: Option<usize>,
    /// Solver residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Sub-square center `x,y`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    center: Option<Vec<f64>>,
    /// Sub-square half-widths, decreasing, comma separated.
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Solution dump to analyse (regularity).
    #[arg(long)]
    input: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            output: self.out.clone(),
            p: self.p,
            eps: self.eps,
            cells: self.cells,
            tol: self.tol,
            seed: self.seed,
            samples: self.samples,
            center: self.center.as_ref().map(|c| [c[0], c[1]]),
            radii: self.radii.clone(),
            input: self.input.clone(),
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("CPLAP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("CPLAP_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Solve(c) => (Kind::Solve, c),
        Command::StructureTest(c) => (Kind::StructureTest, c),
        Command::Sensitivity(c) => (Kind::Sensitivity, c),
        Command::Regularity(c) => (Kind::Regularity, c),
        Command::ConvergenceStudy(c) => (Kind::ConvergenceStudy, c),
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let resolved = ExperimentConfig::load(&common.config).and_then(|mut cfg| {
        cfg.apply(&common.overrides());
        cfg.resolve()
    });
    let cfg = match resolved {
        Ok(cfg) if cfg.kind == kind => cfg,
        Ok(cfg) => {
            eprintln!(
                "error: config kind {} does not match subcommand {}",
                cfg.kind.name(),
                kind.name()
            );
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    ExitCode::from(run::execute(&cfg) as u8)
}
