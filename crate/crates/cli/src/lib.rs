//! Command-line front end for the decoupling-field solver.
//!
//! Every command reads a TOML configuration (where one is needed), writes
//! its results as CSV and JSON files into an output directory, and prints a
//! one-line summary to stdout. All randomness is derived from the seed in
//! the configuration or flags, and parallel reductions preserve order, so
//! re-running a command with the same inputs reproduces every output file
//! byte for byte, independent of `--threads`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
//! arguments, 3 monotonicity gate failed, 4 missing solve manifest,
//! 5 oracle comparison requested for a family without a closed form.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

/// Process failure carrying the exit code to report.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    /// Invalid configuration or arguments (exit 2).
    pub fn config(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }

    /// Runtime failure (exit 1).
    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(1, message)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (exit code {})", self.message, self.code)
    }
}

impl From<mfglab_core::Error> for Failure {
    fn from(e: mfglab_core::Error) -> Self {
        use mfglab_core::Error as E;
        let code = match &e {
            E::InvalidArgument(_)
            | E::DimensionMismatch { .. }
            | E::InvalidMeasure(_)
            | E::UnknownFamily(_) => 2,
            _ => 1,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::runtime(format!("json error: {e}"))
    }
}

/// Writes a progress line to stderr when the `MFG_LOG` environment
/// variable is set. Never touches stdout, which carries only the final
/// machine-readable summary.
pub(crate) fn log_line(msg: &str) {
    if std::env::var_os("MFG_LOG").is_some_and(|v| !v.is_empty()) {
        eprintln!("[mfglab] {msg}");
    }
}

#[derive(Parser)]
#[command(
    name = "mfglab",
    version,
    about = "Solve mean-field decoupling fields and audit the solution"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Outputs
    /// are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the field fixed point; write tables, history, and a manifest.
    Solve {
        /// TOML problem configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-solve under perturbed terminal data and initial measures and fit
    /// the stability response exponents.
    VerifyEstimates {
        #[arg(long)]
        config: PathBuf,
        /// Output directory holding the manifest of a previous solve.
        #[arg(long)]
        out: PathBuf,
        /// Perturbation sizes, comma separated, descending.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001")]
        deltas: Vec<f64>,
        /// Run the solve first when the output directory has no manifest.
        #[arg(long)]
        solve_first: bool,
    },
    /// Sweep regularization levels for a family's terminal map and certify
    /// the per-level Lipschitz and growth bounds.
    Regularize {
        /// Coefficient family name (see `probe-monotonicity`).
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Family parameter overrides, repeatable: --param key=value.
        #[arg(long, value_parser = parse_key_value)]
        param: Vec<(String, f64)>,
        /// Regularization levels, comma separated, strictly decreasing.
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        eval_clouds: usize,
        #[arg(long, default_value_t = 256)]
        pairs: usize,
        #[arg(long, default_value_t = 16)]
        cloud_size: usize,
        /// Radius of the compact evaluation window.
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Skip the growth-bound certificate; lifts the requirement that
        /// every level stay below 1 / growth_constant.
        #[arg(long)]
        skip_growth: bool,
    },
    /// Solve a linear-quadratic problem and compare every table node
    /// against the closed-form solution.
    OracleCompare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample monotonicity, coercivity, and growth quotients for the
    /// configured coefficient family.
    ProbeMonotonicity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampled pairs per probe.
        #[arg(long, default_value_t = 256)]
        pairs: usize,
        /// Exit with code 3 unless the sampled quotients certify
        /// monotonicity.
        #[arg(long)]
        require_monotone: bool,
    },
}

fn parse_key_value(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let value = v
        .parse::<f64>()
        .map_err(|e| format!("bad value in {s:?}: {e}"))?;
    Ok((k.trim().to_string(), value))
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Solve { config, out } => commands::solve::run(&config, &out).map(|_| ()),
        Command::VerifyEstimates {
            config,
            out,
            deltas,
            solve_first,
        } => commands::verify::run(&config, &out, &deltas, solve_first),
        Command::Regularize {
            family,
            dim,
            param,
            epsilons,
            out,
            eval_clouds,
            pairs,
            cloud_size,
            radius,
            seed,
            skip_growth,
        } => commands::regularize::run(&commands::regularize::Request {
            family,
            dim,
            params: param.into_iter().collect(),
            epsilons,
            out,
            eval_clouds,
            pairs,
            cloud_size,
            radius,
            seed,
            skip_growth,
        }),
        Command::OracleCompare { config, out } => commands::oracle::run(&config, &out).map(|_| ()),
        Command::ProbeMonotonicity {
            config,
            out,
            pairs,
            require_monotone,
        } => commands::probes::run(&config, &out, pairs, require_monotone),
    }
}

/// Parses and runs one invocation; returns the process exit code. The
/// binary is a thin wrapper around this, and tests call it directly.
pub fn run_with_args(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(p) => p,
                Err(e) => return report(&Failure::config(format!("thread pool: {e}"))),
            };
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(f) => report(&f),
    }
}

/// Prints a machine-readable error object to stderr and returns the code.
fn report(f: &Failure) -> i32 {
    eprintln!(
        "{}",
        serde_json::json!({ "error": f.message, "code": f.code })
    );
    f.code
}
