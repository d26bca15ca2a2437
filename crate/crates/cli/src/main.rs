mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use needle_core::planner::PlanMode;

/// Needle insertion planning, closed-loop tracking and EM evaluation.
#[derive(Debug, Parser)]
#[command(name = "needle", version)]
pub struct Cli {
    /// Scenario file (TOML). Defaults to the bundled phantom scenario.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Master seed; overrides the scenario's campaign seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for parallel sampling and campaign runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a nominal insertion to one target.
    Plan(PlanArgs),
    /// Track a saved plan in closed loop on the perturbed plant.
    Track(TrackArgs),
    /// Plan and track a single insertion.
    Run(RunArgs),
    /// Plan every scenario target and run all repetitions.
    Campaign,
    /// Error statistics of a recorded EM grid dataset.
    EmEval(EmEvalArgs),
    /// Synthesize an EM grid dataset from the scenario's sensor model.
    EmSynth(EmSynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    /// Index into the scenario's target list; also selects the derived seeds.
    #[arg(long, default_value_t = 0)]
    pub target: usize,
    /// Target depth below the skin (mm); replaces the indexed target.
    #[arg(long, requires = "offset")]
    pub depth: Option<f64>,
    /// Target lateral offset (mm); replaces the indexed target.
    #[arg(long, requires = "depth", allow_hyphen_values = true)]
    pub offset: Option<f64>,
    /// Planning strategy; defaults to the scenario's.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Manipulation,
    Steering,
}

impl From<ModeArg> for PlanMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Manipulation => PlanMode::Manipulation,
            ModeArg::Steering => PlanMode::Steering,
        }
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Plan trajectory CSV written by `plan`; its `.json` sibling is read too.
    #[arg(long)]
    pub plan: PathBuf,
    /// Target index used to derive the run seed.
    #[arg(long, default_value_t = 0)]
    pub target: usize,
    /// Repetition index used to derive the run seed.
    #[arg(long, default_value_t = 0)]
    pub rep: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub target: TargetArgs,
    /// Repetition index used to derive the run seed.
    #[arg(long, default_value_t = 0)]
    pub rep: usize,
}

#[derive(Debug, Args)]
pub struct EmEvalArgs {
    /// Grid dataset CSV.
    #[arg(long)]
    pub grid: PathBuf,
    /// Indicator value splitting the constant and linear error branches.
    #[arg(long, default_value_t = needle_core::em::INDICATOR_THRESHOLD)]
    pub breakpoint: f64,
    /// Percentile of the indicator samples reported as the threshold.
    #[arg(long, default_value_t = 95.0)]
    pub percentile: f64,
}

#[derive(Debug, Args)]
pub struct EmSynthArgs {
    /// Grid points per axis.
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    /// Edge length of the grid cube (mm).
    #[arg(long, default_value_t = 100.0)]
    pub side: f64,
    /// Samples per grid point.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Distortion indicator; defaults to the scenario sensor's.
    #[arg(long)]
    pub indicator: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
