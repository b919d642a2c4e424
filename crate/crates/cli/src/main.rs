use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use degenpar_cli::artifacts::write_artifacts;
use degenpar_cli::{emit_report, load_inputs, run_experiment, CliError, ExperimentConfig, Kind};

const WORKERS_VAR: &str = "DEGENPAR_WORKERS";

#[derive(Parser)]
#[command(name = "degenpar", version, about = "Experiments on degenerate parabolic equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problems and write the final slices
    Solve(RunArgs),
    /// Evaluate the inequality ratios on random fields
    Ineq(RunArgs),
    /// Check the estimates against their frozen constants
    Estimates(RunArgs),
    /// Oscillation profiles and Hölder exponent fits
    Holder(RunArgs),
    /// Repeat an experiment kind over several values of p
    Sweep(RunArgs),
    /// Aggregate ledgers, fits and profiles into a pass/fail summary
    Report {
        /// Ledger files or directories holding them
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid sizes, comma separated
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Weight exponent; a comma separated list for sweeps
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    p: Option<Vec<f64>>,
}

fn configure(kind: Kind, args: RunArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(CliError::Usage(format!("configuration is of kind `{}`, not `{}`", k.name(), kind.name())));
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if let Some(grids) = args.grid {
        if grids.iter().any(|&g| g < 4) {
            return Err(CliError::Usage("grids need at least 4 cells".into()));
        }
        cfg.grids = grids;
    }
    if let Some(p) = args.p {
        if kind == Kind::Sweep {
            cfg.sweep.p = p;
        } else if let [p] = p[..] {
            cfg.problem.p = p;
        } else {
            return Err(CliError::Usage("--p takes a single value outside sweeps".into()));
        }
    }
    let out = args.out.or_else(|| cfg.output.clone()).ok_or_else(|| CliError::Usage("no output directory: pass --out or set `output`".into()))?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let (kind, args) = match cli.command {
        Command::Report { inputs, out } => {
            let report = emit_report(&load_inputs(&inputs)?)?;
            write_artifacts(&out, &report.artifacts)?;
            print!("{}", String::from_utf8_lossy(&report.artifacts[0].bytes));
            return Ok(if report.pass { 0 } else { 1 });
        }
        Command::Solve(a) => (Kind::Solve, a),
        Command::Ineq(a) => (Kind::Ineq, a),
        Command::Estimates(a) => (Kind::Estimates, a),
        Command::Holder(a) => (Kind::Holder, a),
        Command::Sweep(a) => (Kind::Sweep, a),
    };
    let (cfg, out) = configure(kind, args)?;
    let outcome = run_experiment(kind, &cfg)?;
    write_artifacts(&out, &outcome.artifacts)?;
    let checks_estimates = kind == Kind::Estimates || (kind == Kind::Sweep && cfg.sweep.kind == Kind::Estimates);
    if checks_estimates && !outcome.violations.is_empty() {
        eprintln!("{} estimate violation(s):", outcome.violations.len());
        eprintln!("{}", degenpar::ineq::LEDGER_HEADER);
        for v in &outcome.violations {
            eprintln!("{}", v.to_csv_row());
        }
        return Ok(1);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var(WORKERS_VAR).ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
