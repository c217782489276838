//! `wbary`: generate barycenter instances, solve them, compare solvers and
//! time sGS-ADMM.
//!
//! Exit status: 0 on success (for `solve` and `free-support`, convergence),
//! 2 when a solver stopped at its iteration cap, 1 on any error.

mod commands;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wbary::badmm::WRule;
use wbary::ibp::IbpMode;
use wbary::Method;

pub const EXIT_CAP: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "wbary", version, about = "Wasserstein barycenters of discrete distributions")]
struct Cli {
    /// More log output (repeatable); RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic instance as JSON.
    Generate(GenerateArgs),
    /// Solve one instance with one method.
    Solve(SolveArgs),
    /// Run several methods on the same instances and tabulate the results.
    Compare(CompareArgs),
    /// Optimize the barycenter support points as well as the weights.
    FreeSupport(FreeSupportArgs),
    /// Time sGS-ADMM iterations for a sweep of N.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Case {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    GaussPair,
}

#[derive(Debug, Clone, Args)]
pub struct GenParams {
    #[arg(long, value_enum, default_value = "1")]
    pub case: Case,
    /// Number of distributions.
    #[arg(short = 'n', long = "n", default_value_t = 20)]
    pub n: usize,
    /// Barycenter support size (also the grid size for gauss-pair).
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    /// Support size of each distribution (cases 1 and 2).
    #[arg(long, default_value_t = 50)]
    pub m_prime: usize,
    /// Sparsity ratio (case 2).
    #[arg(long, default_value_t = 0.1)]
    pub sr: f64,
    /// Point dimension.
    #[arg(long, default_value_t = 3)]
    pub d: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub params: GenParams,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write cost matrices and marginals instead of distributions.
    #[arg(long)]
    pub precomputed: bool,
    /// For gauss-pair, also write the true barycenter weights here.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

/// Solver options shared by `solve` and `compare`. Unset values take each
/// solver's own default.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverFlags {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Worker threads.
    #[arg(long, env = "WBARY_THREADS")]
    pub threads: Option<usize>,
    /// Initial penalty (sgs).
    #[arg(long)]
    pub beta0: Option<f64>,
    /// Dual step length (sgs).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Entropic regularization (ibp).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Scaling or log-domain iteration (ibp); picked from epsilon when absent.
    #[arg(long)]
    pub ibp_mode: Option<IbpMode>,
    /// Bregman penalty (badmm).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Barycenter update rule (badmm): r1, r2 or geometric.
    #[arg(long)]
    pub w_rule: Option<WRule>,
    /// Drop zero-weight support points first (default for ibp and badmm).
    #[arg(long, overrides_with = "no_presolve")]
    pub presolve: bool,
    #[arg(long, overrides_with = "presolve")]
    pub no_presolve: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance JSON.
    pub instance: PathBuf,
    #[arg(long, default_value = "sgs")]
    pub method: Method,
    #[command(flatten)]
    pub flags: SolverFlags,
    /// Seed for k-means barycenter supports when the file has none.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Solution JSON; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Solve report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Convergence trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Include the transport plans in the solution file.
    #[arg(long)]
    pub emit_plans: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Markdown,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Instance JSON; when absent, instances are generated with the case flags.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[command(flatten)]
    pub params: GenParams,
    /// Methods to run, e.g. `oracle,sgs,ibp@0.01,badmm`.
    #[arg(long, value_delimiter = ',', default_value = "oracle,sgs,ibp,badmm")]
    pub methods: Vec<runner::MethodSpec>,
    #[command(flatten)]
    pub flags: SolverFlags,
    /// Seed of the first trial; trial k uses seed + k.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Independent generated instances to average over.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: TableFormat,
    /// Table output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run the methods of a trial concurrently (timings then share the cores).
    #[arg(long)]
    pub parallel_methods: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Inner {
    Sgs,
    Badmm,
    Ibp,
    Oracle,
}

#[derive(Debug, Args)]
pub struct FreeSupportArgs {
    /// Instance JSON with distributions (p = 2).
    pub instance: PathBuf,
    /// Number of barycenter support points.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, value_enum, default_value = "sgs")]
    pub inner: Inner,
    /// Entropic regularization when the inner solver is ibp.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// Inner iterations per outer step.
    #[arg(long)]
    pub inner_max_iter: Option<usize>,
    /// Relative objective change that stops the outer loop.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Outer iteration cap.
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Restart the inner solver from scratch at every outer step.
    #[arg(long)]
    pub no_warm_start: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = "WBARY_THREADS")]
    pub threads: Option<usize>,
    /// Result JSON; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Objective per outer iteration as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub emit_plans: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Values of N, ascending.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    #[arg(long, default_value_t = 10)]
    pub m_prime: usize,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Timed runs per N; the fastest is kept.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = "WBARY_THREADS")]
    pub threads: Option<usize>,
    /// Timing CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::FreeSupport(a) => commands::free_support(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
