//! Command-line interface.
//!
//! Every subcommand writes its data as CSV and its human-readable summary to
//! stdout; timings go to stderr so that stdout and files are reproducible.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{expand_config, CONFIG_ENV};

/// Exit status for success, bad usage and numerical failure.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "tdnode",
    version,
    about = "Learn delay differential equations with neural ODEs on a discretized history",
    after_help = "Defaults reproduce the reference Mackey-Glass experiment \
                  (beta=4, gamma=2, delta=9.65, tau=1, h=0.05, tau_max=1.5).\n\
                  Flags may also be given as key=value lines in a file passed with \
                  --config or named by the TDNODE_CONFIG environment variable; \
                  explicit flags win.",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat key=value file mirroring the flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate Mackey-Glass trajectories from constant histories
    GenData(GenDataArgs),
    /// Train the network weights and delays
    Train(TrainArgs),
    /// Roll N-step predictions of a model over a dataset
    Eval(EvalArgs),
    /// Sweep the delay and record steady-state extrema
    Bifurcate(BifurcateArgs),
    /// Compare a model's nonlinearity with the Mackey-Glass one on a grid
    Surface(SurfaceArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Critical delay of the Mackey-Glass equilibrium
    Hopf(MgArgs),
}

#[derive(Args, Debug, Clone)]
pub struct MgArgs {
    /// Feedback gain beta
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    /// Decay rate gamma
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// Hill exponent delta
    #[arg(long, default_value_t = 9.65)]
    pub delta: f64,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output dataset CSV
    #[arg(long, default_value = "data.csv")]
    pub out: PathBuf,
    /// Number of trajectories; trajectory i starts from x = 0.5 + i/(n-1)
    #[arg(long, default_value_t = 100)]
    pub n_traj: usize,
    /// Sample spacing
    #[arg(long = "h", default_value_t = 0.05)]
    pub h: f64,
    /// Length of the discretized history
    #[arg(long, default_value_t = 1.5)]
    pub tau_max: f64,
    /// Delay of the simulated system
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[command(flatten)]
    pub mg: MgArgs,
    /// Start of the kept window
    #[arg(long, default_value_t = 10.0)]
    pub t_drop: f64,
    /// End of the training split
    #[arg(long, default_value_t = 17.0)]
    pub t_train_end: f64,
    /// End of the test split
    #[arg(long, default_value_t = 20.0)]
    pub t_test_end: f64,
    /// RK4 steps per sample interval
    #[arg(long, default_value_t = 10)]
    pub substeps: usize,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset CSV written by gen-data
    #[arg(long)]
    pub data: PathBuf,
    /// Samples with t <= this are training data
    #[arg(long, default_value_t = 17.0)]
    pub t_train_end: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Final model file
    #[arg(long, default_value = "model.txt")]
    pub out: PathBuf,
    /// Training log CSV
    #[arg(long, default_value = "train_log.csv")]
    pub log: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1000)]
    pub batch_size: usize,
    /// Simulation horizon N in samples
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Adam step size
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Number of delays d
    #[arg(long, default_value_t = 2)]
    pub delays: usize,
    /// Hidden layer widths
    #[arg(long, value_delimiter = ',', default_value = "5,5")]
    pub hidden: Vec<usize>,
    /// RK4 steps per sample interval
    #[arg(long, default_value_t = 10)]
    pub substeps: usize,
    /// Train tau_1 too instead of pinning it at 0
    #[arg(long)]
    pub learn_first_delay: bool,
    /// Initial delays instead of random ones
    #[arg(long, value_delimiter = ',')]
    pub init_delays: Option<Vec<f64>>,
    /// Write a checkpoint every K iterations
    #[arg(long, value_name = "K")]
    pub checkpoint_every: Option<usize>,
    /// Directory for periodic checkpoints [default: next to --out]
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Expected state dimension; checked against the dataset header
    #[arg(long)]
    pub n: Option<usize>,
    /// Expected sample spacing; checked against the dataset header
    #[arg(long = "h")]
    pub h: Option<f64>,
    /// Expected mesh count M; checked against the dataset header
    #[arg(long = "m")]
    pub m: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file written by train
    #[arg(long, required_unless_present = "ground_truth")]
    pub model: Option<PathBuf>,
    /// Use the exact Mackey-Glass nonlinearity with delays (0, --tau)
    #[arg(long, conflicts_with = "model")]
    pub ground_truth: bool,
    /// Delay used with --ground-truth
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[command(flatten)]
    pub mg: MgArgs,
    /// Prediction horizon N in samples
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Trajectory written to the prediction CSV
    #[arg(long, default_value_t = 0)]
    pub traj: usize,
    #[arg(long, default_value_t = 10)]
    pub substeps: usize,
    /// Prediction CSV
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BifurcateArgs {
    /// Model file; its last delay is swept
    #[arg(long, required_unless_present = "ground_truth")]
    pub model: Option<PathBuf>,
    /// Sweep the Mackey-Glass equation itself
    #[arg(long, conflicts_with = "model")]
    pub ground_truth: bool,
    #[command(flatten)]
    pub mg: MgArgs,
    #[arg(long, default_value_t = 0.0)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub tau_max_scan: f64,
    #[arg(long, default_value_t = 201)]
    pub tau_steps: usize,
    /// Constant initial history
    #[arg(long, default_value_t = 0.9)]
    pub history: f64,
    #[arg(long, default_value_t = 200.0)]
    pub t_transient: f64,
    #[arg(long, default_value_t = 100.0)]
    pub t_measure: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Skip extrema less prominent than this fraction of the peak-to-peak amplitude
    #[arg(long, default_value_t = 0.1)]
    pub min_prominence: f64,
    /// Also sweep the Mackey-Glass equation and report the Hausdorff distance per delay
    #[arg(long, requires = "model")]
    pub compare: bool,
    /// Per-delay distances written with --compare
    #[arg(long, requires = "compare")]
    pub compare_out: Option<PathBuf>,
    /// Diagram CSV
    #[arg(long, default_value = "bifurcation.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SurfaceArgs {
    /// Model file with two delays and tau_1 = 0
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub mg: MgArgs,
    #[arg(long, default_value_t = 0.2)]
    pub x_min: f64,
    #[arg(long, default_value_t = 1.5)]
    pub x_max: f64,
    #[arg(long, default_value_t = 0.2)]
    pub delayed_min: f64,
    #[arg(long, default_value_t = 1.5)]
    pub delayed_max: f64,
    /// Grid points along each axis
    #[arg(long, default_value_t = 101)]
    pub resolution: usize,
    /// Surface CSV
    #[arg(long, default_value = "surface.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Finite-difference step for weights
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Finite-difference step for delays
    #[arg(long, default_value_t = 1e-5)]
    pub delay_eps: f64,
    /// Random configurations
    #[arg(long, default_value_t = 20)]
    pub configs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Place tau_2 exactly on a mesh node
    #[arg(long)]
    pub at_grid_crossing: bool,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args, std::env::var_os(CONFIG_ENV)) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("warning: {e}");
        }
    }
    match commands::dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}
