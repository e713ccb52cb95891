use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::report::Format;

#[derive(Parser, Debug)]
#[command(
    name = "censet",
    version,
    about = "Identified-set geometry and certified KL recovery bounds for top-K censored observations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Observations, one JSON record per line
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Write the report here instead of stdout
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// K values, e.g. 1,5,10,20,50,100
    #[arg(long = "k", global = true, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Target KL tolerance in nats
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Fine-tuning margin on reference logits
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Reference logit dump, one JSON record per position
    #[arg(long, global = true)]
    pub reference: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Report divergences in bits
    #[arg(long, global = true)]
    pub bits: bool,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Per-observation geometry, caps and certified bounds
    Analyze,
    /// U_K / R_bin statistics across K over full dumps or a synthetic teacher
    Ksweep(SweepArgs),
    /// Impossibility verdicts against --delta
    Certify,
    /// Reference-aware diameter, estimator and rho calibration
    Reference(ReferenceArgs),
    /// Synthetic teacher, censoring and worst-case risk per K
    Simulate(TeacherArgs),
    /// Non-adaptive composition of per-position brackets
    Compose(ComposeArgs),
    /// Run every brute-force oracle and report pass/fail
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Law {
    Gaussian,
    Dirichlet,
    Peaked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Logits,
    Logprobs,
}

#[derive(Args, Debug, Clone)]
pub struct TeacherArgs {
    #[arg(long, default_value_t = 1000)]
    pub vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub positions: usize,
    #[arg(long, value_enum, default_value_t = Law::Gaussian)]
    pub law: Law,
    #[arg(long, default_value_t = 0.0)]
    pub mean: f64,
    #[arg(long, default_value_t = 3.0)]
    pub sd: f64,
    #[arg(long, default_value_t = 0.1)]
    pub concentration: f64,
    #[arg(long, default_value_t = 1)]
    pub head_size: usize,
    #[arg(long, default_value_t = 10.0)]
    pub gap: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Grid size for the tail-mass search of the worst-case risk
    #[arg(long, default_value_t = 400)]
    pub t_grid: usize,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub teacher: TeacherArgs,
    /// Access mode used when censoring
    #[arg(long, value_enum, default_value_t = ModeArg::Logits)]
    pub mode: ModeArg,
}

#[derive(Args, Debug, Clone)]
pub struct ReferenceArgs {
    /// Candidate margins for the calibration diagnostic
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,5")]
    pub rho_candidates: Vec<f64>,
    /// Measure perturbations relative to the top revealed token
    #[arg(long)]
    pub anchor_top: bool,
    #[arg(long, default_value_t = 400)]
    pub t_grid: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ComposeArgs {
    #[arg(long, default_value_t = 400)]
    pub t_grid: usize,
    /// Per-position points of the joint grid; chosen automatically if absent
    #[arg(long)]
    pub joint_grid: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    /// Random cases per oracle
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
}
