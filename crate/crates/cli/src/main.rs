// Validation guards use `!(x > y)` on purpose: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;
mod overrides;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "sdforge",
    version,
    about = "Scenario discovery over simulator experiments"
)]
pub(crate) struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a Latin hypercube design for an experiment
    Sample(SampleArgs),
    /// Simulate a design and label every scenario
    Simulate(SampleArgs),
    /// Find vulnerable boxes by peeling and covering
    Discover(DiscoverArgs),
    /// Fit and prune a classification tree over the labeled design
    Cart(CartArgs),
    /// Count vulnerable scenarios across a grid of lever settings
    Sweep(SweepArgs),
    /// Run the metamodel-guided sampling loop end to end
    Adaptive(AdaptiveArgs),
    /// Score a saved metamodel against a fresh truth set
    Evaluate(EvaluateArgs),
    /// Serve the interactive run API over HTTP
    Serve(ServeArgs),
}

#[derive(Args)]
pub(crate) struct CommonArgs {
    /// Experiment file (JSON)
    #[arg(long)]
    pub experiment: PathBuf,
    /// Directory artifacts are written to
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Root seed; beats SDFORGE_SEED, which beats the experiment's seed
    #[arg(long, env = "SDFORGE_SEED")]
    pub seed: Option<u64>,
    /// Dotted-path override into the experiment document, repeatable,
    /// e.g. --set lever.delta=20
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args)]
pub(crate) struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of scenarios; defaults to the experiment's n_scenarios
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Args)]
pub(crate) struct DiscoverArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of scenarios; defaults to the experiment's n_scenarios
    #[arg(long)]
    pub n: Option<usize>,
    /// Fraction of in-box points removed per peel step
    #[arg(long)]
    pub patience: Option<f64>,
    /// Stop peeling once in-box mass falls below this share
    #[arg(long)]
    pub support_threshold: Option<f64>,
    /// Minimum density improvement a peel must deliver
    #[arg(long)]
    pub min_mean_gain: Option<f64>,
    /// Auto-selection considers only steps with at least this coverage
    #[arg(long)]
    pub coverage_floor: Option<f64>,
    /// Covering stops after this many boxes
    #[arg(long)]
    pub max_boxes: Option<usize>,
    /// Covering stops at this cumulative coverage
    #[arg(long)]
    pub stop_coverage: Option<f64>,
}

#[derive(Args)]
pub(crate) struct CartArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of scenarios; defaults to the experiment's n_scenarios
    #[arg(long)]
    pub n: Option<usize>,
    /// Nodes smaller than this are not split
    #[arg(long)]
    pub min_split: Option<usize>,
    /// Minimum points on each side of a split
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
}

#[derive(Args)]
pub(crate) struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Lever grid: a comma list (0,5,10) or a min:max:step range (0.5:30:0.5)
    #[arg(long)]
    pub deltas: String,
    /// Scenarios per lever setting; defaults to the experiment's n_scenarios
    #[arg(long)]
    pub n: Option<usize>,
    /// A lever setting qualifies as the threshold when its vulnerable
    /// count is at or below this
    #[arg(long)]
    pub cutoff: Option<usize>,
}

#[derive(Args)]
pub(crate) struct AdaptiveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Initial design size
    #[arg(long)]
    pub n_init: Option<usize>,
    /// Candidate pool the metamodel labels each iteration
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Number of acquisition iterations
    #[arg(long)]
    pub n_iter: Option<usize>,
    /// True simulator calls per iteration
    #[arg(long)]
    pub batch: Option<usize>,
    /// Where batch points land relative to the proposed box
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Probability a batch point lands in the interior rather than on
    /// the border (interior-or-border mode)
    #[arg(long)]
    pub interior_prob: Option<f64>,
    /// Hyperparameter search budget per fit
    #[arg(long)]
    pub gp_budget: Option<usize>,
    /// Also score the final model against a truth set of this size
    #[arg(long)]
    pub truth_n: Option<usize>,
    /// Seed for the truth set; defaults to a stream derived from the root
    #[arg(long)]
    pub truth_seed: Option<u64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub(crate) enum ModeArg {
    InteriorOrBorder,
    BorderOnly,
}

#[derive(Args)]
pub(crate) struct EvaluateArgs {
    /// Artifact directory of a finished adaptive run
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub truth_n: usize,
    /// Seed for the truth set; defaults to a stream derived from the root
    #[arg(long)]
    pub truth_seed: Option<u64>,
    /// Root seed; beats SDFORGE_SEED, which beats the stored experiment's
    #[arg(long, env = "SDFORGE_SEED")]
    pub seed: Option<u64>,
    /// Output directory; defaults to <run>/evaluation
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub(crate) struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8787")]
    pub addr: SocketAddr,
    /// Directory run records persist to
    #[arg(long, default_value = "sdforge-runs")]
    pub data_dir: PathBuf,
    /// Static explorer bundle to host at /
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

fn main() {
    std::process::exit(run_cli());
}

fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print to stdout and exit 0; real parse
            // errors print usage to stderr and exit 1.
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Sample(args) => commands::sample(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Discover(args) => commands::discover(args),
        Command::Cart(args) => commands::cart(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Adaptive(args) => commands::adaptive(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Serve(args) => commands::serve(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
