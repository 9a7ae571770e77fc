//! `fluidq`: solve, sweep and simulate fluid-queue models described in JSON.
//!
//! Exit codes: 0 on success, 1 on invalid input or a failed solve, 2 when the
//! model is not positive recurrent (the drift table is still written).

mod commands;
mod input;
mod table;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluidq::colored::SolveOptions;
use fluidq::FluidError;

use commands::{Context, Param, SimArgs};

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Io(String),
    Solve(FluidError),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Solve(FluidError::NotRecurrent | FluidError::Unstable { .. }) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "invalid input: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Solve(e) => write!(f, "{e}"),
        }
    }
}

impl From<FluidError> for Failure {
    fn from(e: FluidError) -> Self {
        Failure::Solve(e)
    }
}

#[derive(Parser)]
#[command(name = "fluidq", version, about = "Stationary analysis of Markov-modulated fluid queues")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Model file (JSON).
    spec: PathBuf,
    /// Directory for the CSV tables.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Level grid `a:b:n` (n evenly spaced points from a to b).
    #[arg(long, default_value = "0:10:21", value_parser = parse_grid)]
    grid: Grid,
    /// Convergence tolerance of the Riccati iteration.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model and write its stationary tables.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Compare cascade queue lengths with the phase-type QBD baseline.
        #[arg(long)]
        qbd_baseline: bool,
    },
    /// Solve a model for each value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: Param,
        /// Comma-separated values; thresholds also accept `inf`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        qbd_baseline: bool,
    },
    /// Estimate stationary statistics by simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e5)]
        horizon: f64,
        #[arg(long, default_value_t = 1e3)]
        warmup: f64,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Add analytic values and z-scores.
        #[arg(long)]
        compare: bool,
    },
}

#[derive(Debug, Clone)]
struct Grid(Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err(format!("expected a:b:n, got {s}"));
    };
    let a: f64 = a.parse().map_err(|_| format!("bad grid start {a}"))?;
    let b: f64 = b.parse().map_err(|_| format!("bad grid end {b}"))?;
    let n: usize = n.parse().map_err(|_| format!("bad grid size {n}"))?;
    if n == 0 || !(a >= 0.0) || !(b >= a) || !b.is_finite() {
        return Err(format!("need 0 <= a <= b and n >= 1, got {s}"));
    }
    if n == 1 {
        return Ok(Grid(vec![a]));
    }
    Ok(Grid((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()))
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("FLUIDQ_THREADS") else {
        return Ok(());
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            fluidq::par::init_threads(n);
            Ok(())
        }
        _ => Err(Failure::Input(format!("FLUIDQ_THREADS: expected a positive integer, got \"{v}\""))),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let (name, common) = match &cli.command {
        Command::Solve { common, .. } => ("solve", common),
        Command::Sweep { common, .. } => ("sweep", common),
        Command::Simulate { common, .. } => ("simulate", common),
    };
    let mut opts = SolveOptions::default();
    if let Some(t) = common.tol {
        if !(t > 0.0) {
            return Err(Failure::Input(format!("--tol: must be positive, got {t}")));
        }
        opts.tol.nare_step = t;
    }
    let model = input::load(&common.spec)?;
    std::fs::create_dir_all(&common.out).map_err(|e| Failure::Io(format!("{}: {e}", common.out.display())))?;

    let file = common.spec.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned());
    let mut footer = vec![
        format!("fluidq {}", env!("CARGO_PKG_VERSION")),
        format!("command {name} on {file} (kind {})", model.kind()),
        format!(
            "tolerances generator={:e} nare_step={:e} max_iter={}",
            opts.tol.generator, opts.tol.nare_step, opts.tol.max_iter
        ),
    ];
    if let Command::Simulate { horizon, warmup, reps, seed, .. } = &cli.command {
        footer.push(format!("simulation seed={seed} reps={reps} horizon={horizon:e} warmup={warmup:e}"));
    }
    if let Command::Sweep { .. } = &cli.command {
        footer.push("seconds is wall-clock time per solve".into());
    }
    let ctx = Context { out: &common.out, grid: &common.grid.0, opts, footer };

    match &cli.command {
        Command::Solve { qbd_baseline, .. } => commands::solve(&model, &ctx, *qbd_baseline),
        Command::Sweep { param, values, qbd_baseline, .. } => commands::sweep(&model, &ctx, *param, values, *qbd_baseline),
        Command::Simulate { horizon, warmup, reps, seed, compare, .. } => {
            let args = SimArgs { horizon: *horizon, warmup: *warmup, reps: *reps, seed: *seed, compare: *compare };
            commands::simulate_cmd(&model, &ctx, &args)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors share the validation exit code; help and version succeed.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fluidq: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
