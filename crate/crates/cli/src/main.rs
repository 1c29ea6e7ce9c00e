//! `ballbox`: runs the verification checks of `ballbox-core` from the shell.
//!
//! Exit status is 0 when every check passes, 1 when any fails (the failures
//! are listed on stderr, one tab-separated line each), and 2 on usage errors.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ballbox", version, about = "Numerical checks for Hormander vector fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Commutator table and tuple determinants on a grid.
    Table(Common),
    /// Maximal tuple at a point and its stability constant.
    Select(Common),
    /// Remainder of the approximate exponential of a commutator.
    Expcheck(Common),
    /// Jacobian structure and pulled-back fields of the almost-exponential map.
    Jaccheck(Common),
    /// Sampled ball-box inclusions.
    Ballbox(Common),
    /// Upper bound for the control distance between two points.
    Distance(Common),
    /// Doubling ratios from the reachable-set grid.
    Doubling(Common),
    /// Stratification of a grid by the first nonvanishing layer.
    Stratify(Common),
    /// Convergence and uniform bounds of mollified commutators.
    Mollify(Common),
    /// The full acceptance suite.
    All(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Builtin family name or path to a TOML family file.
    #[arg(long)]
    pub family: Option<String>,
    /// Comma-separated coordinates; defaults to the origin.
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    /// Second point for `distance`.
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
    /// Radii for `doubling`.
    #[arg(long, default_value = "0.025,0.05,0.1")]
    pub radii: String,
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Commutator word such as `1,2` or `(1,1,2)`.
    #[arg(long, default_value = "1,2")]
    pub word: String,
    /// Defaults to 0, or to the suite's fixed seed for `all`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Mollification parameters.
    #[arg(long, default_value = "1e-4,1e-3,1e-2")]
    pub sigmas: String,
    /// Points per axis (or lattice cells per radius for `doubling`).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Time grid for `expcheck`: `lo,hi,count`.
    #[arg(long, default_value = "1e-6,1e-2,9")]
    pub times: String,
    #[arg(long, default_value_t = ballbox_core::mollify::DEFAULT_QUAD_ORDER)]
    pub quad_order: usize,
    /// Divisor in `r_x = |λ| / c` for `stratify`.
    #[arg(long, default_value_t = ballbox_core::maximality::DEFAULT_STRATIFY_C)]
    pub stratify_c: f64,
    /// Largest accepted constant for the pulled-back field coefficients.
    #[arg(long, default_value_t = 10.0)]
    pub c_max: f64,
    /// Write the output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Report)]
    pub format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Report,
}

fn configure_threads() {
    let Ok(v) = std::env::var("BALLBOX_THREADS") else { return };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("cannot set thread count: {e}");
            }
        }
        _ => log::warn!("ignoring BALLBOX_THREADS={v}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    configure_threads();
    let (name, common) = match &cli.command {
        Command::Table(c) => ("table", c),
        Command::Select(c) => ("select", c),
        Command::Expcheck(c) => ("expcheck", c),
        Command::Jaccheck(c) => ("jaccheck", c),
        Command::Ballbox(c) => ("ballbox", c),
        Command::Distance(c) => ("distance", c),
        Command::Doubling(c) => ("doubling", c),
        Command::Stratify(c) => ("stratify", c),
        Command::Mollify(c) => ("mollify", c),
        Command::All(c) => ("all", c),
    };
    let reports = match commands::run(name, common) {
        Ok(r) => r,
        Err(commands::UsageError(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = output::emit(&reports, common.format, common.out.as_deref()) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let failed = output::failure_lines(&reports);
    for line in &failed {
        eprintln!("{line}");
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
