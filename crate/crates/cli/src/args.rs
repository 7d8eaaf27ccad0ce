use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "orbe", version, about = "Robust MDP solver with best-effort policy refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Robust value iteration; writes values and policy, prints the robust return.
    Solve(SolveArgs),
    /// Optimal-robust best-effort policy with a stage report.
    Orbe(OrbeArgs),
    /// Writes a slippery gridworld model.
    GenGridworld(GenArgs),
    /// Robust and best-case return of a given policy.
    Evaluate(EvaluateArgs),
    /// Runs the gridworld experiment matrix and writes a CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AdversaryArg {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Imdp,
    Srect,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Stop when a sweep changes no value by more than this.
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    pub max_iters: usize,
    /// Exit 0 even when the iteration cap is hit.
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub model: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Defaults to the opponent of the model's sense.
    #[arg(long, value_enum)]
    pub adversary: Option<AdversaryArg>,
    /// Value function output [default: <model stem>.values.json in --out-dir].
    #[arg(long)]
    pub values_out: Option<PathBuf>,
    /// Policy output [default: <model stem>.policy.json in --out-dir].
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct OrbeArgs {
    pub model: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Optimal-action tolerance [default: 10 * epsilon].
    #[arg(long)]
    pub tol: Option<f64>,
    /// Relative tolerance for derivative ties.
    #[arg(long, default_value_t = 1e-7)]
    pub deriv_tol: f64,
    /// Report output [default: <model stem>.orbe.json in --out-dir].
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Policy output [default: <model stem>.policy.json in --out-dir].
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10)]
    pub width: usize,
    #[arg(long, default_value_t = 10)]
    pub height: usize,
    #[arg(long, default_value_t = 10)]
    pub obstacles: usize,
    /// Probability that a cell declares its BE moves first.
    #[arg(long, default_value_t = 0.5)]
    pub nu: f64,
    /// Worst-case slip probability.
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    /// Largest slip improvement of a BE move.
    #[arg(long, default_value_t = 0.1)]
    pub q_max: f64,
    #[arg(long, env = "ORBE_RMDP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = VariantArg::Srect)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub model: PathBuf,
    /// Policy file as written by `solve` or `orbe`.
    #[arg(long)]
    pub policy: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated state counts; each must be a perfect square.
    #[arg(long, value_delimiter = ',', default_value = "100,400")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
    pub nus: Vec<f64>,
    /// Number of seeds per cell, counted up from --seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, env = "ORBE_RMDP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = VariantArg::Srect)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0.25)]
    pub p: f64,
    #[arg(long, default_value_t = 0.1)]
    pub q_max: f64,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    pub max_iters: usize,
    /// Concurrent runs; timings are only comparable at 1.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, short, default_value = "bench.csv")]
    pub out: PathBuf,
}
