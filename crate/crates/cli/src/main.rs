//! `aoi` — analyze, optimize, simulate and benchmark slotted random-access
//! protocols for Age of Information.
//!
//! Every subcommand writes its results plus a `manifest.json` under
//! `--out-dir`, and exits 0 on success. Failures map to distinct codes:
//! 2 = invalid parameters or validation, 3 = non-convergence or empty
//! result, 4 = degenerate delivery rate, 5 = file I/O or parse errors.

mod commands;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aoi", version, about = "Age-of-Information analysis for slotted random access")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean-field analysis of one protocol: delivery rate, temporal
    /// variance, and the second-order AoI approximation.
    Analyze(AnalyzeArgs),
    /// Grid search for the age-threshold parameters minimizing the
    /// approximated AoI.
    Optimize(OptimizeArgs),
    /// Slot-level Monte Carlo simulation of one protocol.
    Simulate(SimulateArgs),
    /// Simulate named policies (SOMA / LBOP / SPGP) across network sizes.
    Compare(CompareArgs),
    /// Analytic AoI curve over the normalized transmission scale ε
    /// (p = ε/N) at a fixed threshold.
    SweepEps(SweepEpsArgs),
    /// Runtime comparison: analysis versus full-scale simulation.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    /// Age-threshold ALOHA (states: transmit, backoff, pause chain of H).
    AgeThreshold,
    /// Memoryless ALOHA transmitting with probability p every slot.
    PureAloha,
}

#[derive(Args)]
struct CommonArgs {
    /// Directory for result files and the run manifest.
    #[arg(long, default_value = "aoi-out")]
    out_dir: PathBuf,
    /// JSON file overriding analysis settings (fp_threshold, fp_max_iters,
    /// damping, cov_k_max, cov_term_tol, stat_dist_tol).
    #[arg(long)]
    settings: Option<PathBuf>,
    /// Worker threads for grid points and simulation runs
    /// (default: one per CPU). Results are identical at any thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SourceArgs {
    /// Path to a protocol description JSON (as written by this tool).
    #[arg(long, conflicts_with = "family")]
    spec: Option<PathBuf>,
    /// Built-in protocol family.
    #[arg(long, value_enum)]
    family: Option<Family>,
    /// Age threshold H (age-threshold family only).
    #[arg(long = "H")]
    threshold: Option<u32>,
    /// Transmission probability p (built-in families).
    #[arg(long = "p")]
    tx_prob: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Number of users.
    #[arg(long = "N")]
    num_users: u32,
    /// Fixed-point relaxation weight in [0, 1); without it, a
    /// non-converging run is retried once with damping 0.5.
    #[arg(long)]
    damping: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Number of users.
    #[arg(long = "N")]
    num_users: u32,
    /// Lowest threshold searched.
    #[arg(long, default_value_t = 1)]
    h_min: u32,
    /// Highest threshold searched (default 3N).
    #[arg(long)]
    h_max: Option<u32>,
    /// Lowest transmission probability (default: one p-step).
    #[arg(long)]
    p_min: Option<f64>,
    /// Highest transmission probability.
    #[arg(long, default_value_t = 1.0)]
    p_max: f64,
    /// Grid resolution in p.
    #[arg(long, default_value_t = 0.001)]
    p_step: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Number of users.
    #[arg(long = "N")]
    num_users: u32,
    /// Base seed; run r draws from stream r of this seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Slots per run.
    #[arg(long, default_value_t = 100_000)]
    horizon: u32,
    /// Independent runs.
    #[arg(long, default_value_t = 100)]
    runs: u32,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Network sizes to simulate, comma-separated (e.g. 10,25,50).
    #[arg(long = "N-list", value_delimiter = ',', required = true)]
    n_list: Vec<u32>,
    /// Policies to include (SOMA, LBOP, SPGP), comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "SOMA,LBOP,SPGP")]
    labels: Vec<String>,
    /// Base seed shared by all cells (paired comparisons).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Slots per run (default 20,000; 100,000 with --paper-scale).
    #[arg(long)]
    horizon: Option<u32>,
    /// Independent runs (default 20; 100 with --paper-scale).
    #[arg(long)]
    runs: Option<u32>,
    /// Full-scale experiment: 100 runs of 100,000 slots.
    #[arg(long)]
    paper_scale: bool,
    /// Grid resolution in p for the SOMA optimization step.
    #[arg(long, default_value_t = 0.001)]
    p_step: f64,
    /// Use these SOMA parameters instead of optimizing (with --soma-p).
    #[arg(long, requires = "soma_p")]
    soma_h: Option<u32>,
    /// Use this SOMA transmission probability (with --soma-h).
    #[arg(long, requires = "soma_h")]
    soma_p: Option<f64>,
    /// Also write a line chart of mean AoI versus N.
    #[arg(long)]
    svg: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepEpsArgs {
    /// Number of users.
    #[arg(long = "N")]
    num_users: u32,
    /// Fixed age threshold (default: round(2.2 N)).
    #[arg(long = "H")]
    threshold: Option<u32>,
    /// Sweep range as lo:hi:step over ε, where p = ε/N.
    #[arg(long, default_value = "3.0:6.0:0.05")]
    eps: String,
    /// Also write a line chart of AoI versus ε.
    #[arg(long)]
    svg: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Network sizes to benchmark, comma-separated.
    #[arg(long = "N-list", value_delimiter = ',', required = true)]
    n_list: Vec<u32>,
    /// Time a full 100 x 100,000-slot simulation instead of a timed slice
    /// scaled by a recorded factor.
    #[arg(long)]
    paper_scale: bool,
    /// Simulation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: CommonArgs,
}

fn exit_code(e: &aoi_core::Error) -> i32 {
    use aoi_core::Error::*;
    match e {
        InvalidParameter(_) | Validation { .. } | Estimator(_) => 2,
        NonConvergence { .. } | EmptyResult(_) => 3,
        DegenerateRate { .. } => 4,
        Parse { .. } | Io { .. } => 5,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => commands::analyze(args),
        Command::Optimize(args) => commands::optimize(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Compare(args) => commands::compare(args),
        Command::SweepEps(args) => commands::sweep_eps(args),
        Command::Bench(args) => commands::bench(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
