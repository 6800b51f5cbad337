//! `pairsim` command-line front end.
//!
//! Every command reads rates (and usually a population) from a JSON file,
//! runs one computation from the core library and writes JSON or CSV to
//! `--out` or standard output. Exit status is 0 on success, 2 for invalid
//! input and 3 for numerical failures.

mod commands;
mod input;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] pairsim::Error),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Model(e) if e.is_validation() => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pairsim", version, about = "Encounter-mating pair formation: simulation, fluid limits and mating patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON file with rates and population.
    #[arg(long, value_name = "FILE")]
    params: PathBuf,
    /// Override a file entry, e.g. `--set pi.0.1=2.5` (value is JSON).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LevelArgs {
    /// Axis for both diagonal rates, `lo:hi:steps`.
    #[arg(long, default_value = "0:2:21", value_parser = parse_grid)]
    grid: Grid,
    /// Off-diagonal rate `pi12 = pi21`.
    #[arg(long, default_value_t = 0.5)]
    pi12: f64,
    /// Common type-1 fraction `x1 = y1`.
    #[arg(long, default_value_t = 0.5)]
    x1: f64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Coords {
    Fluid,
    Replicator,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact simulation of the pair-formation chain.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// More than one replicate reports the mean pattern and its standard errors.
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Stop at this time instead of absorption.
        #[arg(long)]
        t_end: Option<f64>,
        /// Population size when the file gives fractions.
        #[arg(long)]
        n: Option<u64>,
    },
    /// Fluid limit on `[0, t-end]` as CSV.
    Fluid {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-8)]
        rtol: f64,
        #[arg(long, value_enum, default_value_t = Coords::Fluid)]
        coords: Coords,
    },
    /// Limiting mating pattern with a certified error bound.
    Pattern {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-8)]
        eps: f64,
    },
    /// Homogamous / panmictic / heterogamous class of a symmetric 2x2 model.
    Classify {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-balance test and decomposition.
    FineBalance {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form analysis of a symmetric 2x2 model.
    Sym2x2 {
        #[command(flatten)]
        common: Common,
    },
    /// Sup-norm distance to the fluid limit for coupled runs across sizes.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of independent coupled runs.
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        n_list: Vec<u64>,
        #[arg(long, default_value_t = 3.0)]
        t_end: f64,
    },
    /// Empirical fluctuation covariance against the limit process.
    Clt {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        replicates: usize,
        /// Probe time.
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        #[arg(long)]
        n: Option<u64>,
    },
    /// `Q12(inf)` over a grid of diagonal rates of a symmetric 2x2 model.
    Levelcurves(LevelArgs),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.lo];
        }
        let h = (self.hi - self.lo) / (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.lo + i as f64 * h).collect()
    }
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, steps] = parts[..] else {
        return Err(format!("{s:?} is not lo:hi:steps"));
    };
    let lo: f64 = lo.parse().map_err(|e| format!("lo: {e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("hi: {e}"))?;
    let steps: usize = steps.parse().map_err(|e| format!("steps: {e}"))?;
    if steps == 0 || !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(format!("{s:?}: need finite lo <= hi and steps >= 1"));
    }
    Ok(Grid { lo, hi, steps })
}

/// Rendered command output.
pub enum Output {
    Json(serde_json::Value),
    Text(String),
}

fn emit(out: Option<&PathBuf>, output: Output) -> Result<(), CliError> {
    let text = match output {
        Output::Json(v) => {
            let mut s = serde_json::to_string_pretty(&v).expect("JSON values serialize");
            s.push('\n');
            s
        }
        Output::Text(s) => s,
    };
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn wants_csv(out: Option<&PathBuf>) -> bool {
    out.and_then(|p| p.extension()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::Simulate {
            common,
            seed,
            replicates,
            t_end,
            n,
        } => {
            let input = input::load(&common.params, &common.overrides)?;
            let csv = wants_csv(common.out.as_ref());
            emit(common.out.as_ref(), simulate(&input, seed, replicates, t_end, n, csv)?)
        }
        Command::Fluid {
            common,
            t_end,
            rtol,
            coords,
        } => {
            let input = input::load(&common.params, &common.overrides)?;
            emit(common.out.as_ref(), fluid(&input, t_end, rtol, coords)?)
        }
        Command::Pattern { common, eps } => {
            let input = input::load(&common.params, &common.overrides)?;
            emit(common.out.as_ref(), pattern(&input, eps)?)
        }
        Command::Classify { common } => {
            let input = input::load(&common.params, &common.overrides)?;
            emit(common.out.as_ref(), classify(&input)?)
        }
        Command::FineBalance { common } => {
            let input = input::load(&common.params, &common.overrides)?;
            emit(common.out.as_ref(), fine_balance(&input)?)
        }
        Command::Sym2x2 { common } => {
            let input = input::load(&common.params, &common.overrides)?;
            emit(common.out.as_ref(), sym2x2(&input)?)
        }
        Command::Converge {
            common,
            seed,
            replicates,
            n_list,
            t_end,
        } => {
            let input = input::load(&common.params, &common.overrides)?;
            emit(common.out.as_ref(), converge(&input, seed, replicates, &n_list, t_end)?)
        }
        Command::Clt {
            common,
            seed,
            replicates,
            t_end,
            n,
        } => {
            let input = input::load(&common.params, &common.overrides)?;
            emit(common.out.as_ref(), clt(&input, seed, replicates, t_end, n)?)
        }
        Command::Levelcurves(args) => {
            let csv = wants_csv(args.out.as_ref());
            emit(args.out.as_ref(), levelcurves(&args.grid, args.pi12, args.x1, csv)?)
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PAIRSIM_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Validation(format!("PAIRSIM_THREADS = {raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
