//! `conerisk`: batch front end for the risk-measure library.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 when the
//! inputs cannot be read or a computation cannot complete.

mod audit;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "conerisk", version, about = "Risk measures with transaction costs on scenario trees")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "CONERISK_THREADS")]
    threads: Option<usize>,

    /// Directory for reports and witness files; reports go to stdout
    /// when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Flatten reports to `path,value` CSV.
    #[arg(long, global = true)]
    csv: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tree invariants, market assumptions and robust no-arbitrage.
    Validate(ModelArgs),
    /// Primal and dual risk values of claims at one time.
    Price(PriceArgs),
    /// Frozen-price risk values for a given price system.
    Pi(PiArgs),
    /// All time-consistency checks as a PASS/FAIL matrix.
    Audit(AuditArgs),
    /// Seeded vertices of the consistent-price-system polytope.
    SamplePrices(SampleArgs),
    /// Search for a pair of claims breaking naive time consistency.
    Falsify(FalsifyArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Model bundle (JSON with `tree`, `market`, optional `claims`, `levels`).
    #[arg(long)]
    model: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SpecKind {
    /// Superhedging matching the market (cone or region).
    Auto,
    /// Superhedging under proportional costs.
    Shp,
    /// Superhedging under convex costs.
    ShpConvex,
    /// Composed average value at risk.
    Avar,
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long, value_enum, default_value = "auto")]
    spec: SpecKind,

    /// AV@R levels: one number for all dates and assets, or a JSON file
    /// holding one row per date. Falls back to the bundle's levels.
    #[arg(long)]
    levels: Option<String>,
}

#[derive(Args)]
struct ClaimArgs {
    /// Claim files (`{"name": {leaf: [..]}}`); defaults to the bundle's
    /// claims.
    #[arg(long)]
    claim: Vec<PathBuf>,
}

#[derive(Args)]
struct PriceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    claims: ClaimArgs,
    #[arg(long, default_value_t = 0)]
    t: usize,
    /// Sampled price systems for the sampled lower bound (and for AV@R).
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted primal-dual residual.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct PiArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    claims: ClaimArgs,
    /// Price system file (`{"S": {node: [..]}}`).
    #[arg(long)]
    prices: PathBuf,
    #[arg(long, default_value_t = 0)]
    t: usize,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    claims: ClaimArgs,
    /// Restrict to one time pair; all pairs `t < s` otherwise.
    #[arg(long, requires = "s")]
    t: Option<usize>,
    #[arg(long, requires = "t")]
    s: Option<usize>,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    /// Random claims added to the named ones.
    #[arg(long, default_value_t = 200)]
    random_claims: usize,
    /// Falsifier trials.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the pass threshold of every check.
    #[arg(long)]
    tol: Option<f64>,
    /// Shift every frozen-price value by this amount (harness self-test).
    #[arg(long, hide = true)]
    corrupt: Option<f64>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FalsifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, alias = "samples", default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let out = output::Sink::new(cli.out.clone(), cli.csv);
    let result = match &cli.command {
        Command::Validate(a) => commands::validate(a, &out),
        Command::Price(a) => commands::price(a, &out),
        Command::Pi(a) => commands::pi(a, &out),
        Command::Audit(a) => audit::run(a, &out),
        Command::SamplePrices(a) => commands::sample_prices(a, &out),
        Command::Falsify(a) => commands::falsify(a, &out),
    };
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
