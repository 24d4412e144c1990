mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eden::EdenError;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "eden", version, about = "Hierarchical knowledge trees over directed graphs")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// One- and two-level structural entropy of the graph.
    Entropy(EntropyArgs),
    /// Build the hierarchical knowledge tree.
    BuildHkt(BuildArgs),
    /// Refine a tree with the mutual-information critic.
    RefineHkt(RefineArgs),
    /// Train and evaluate, building and refining a tree unless one is given.
    Train(TrainArgs),
    /// Class probabilities from a trained checkpoint.
    Predict(PredictArgs),
    /// Completion rates of forward walks on the graph.
    WalkAnalysis(WalkArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving the artifacts.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Overwrite artifacts produced under a different configuration.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Split file or `frac:TRAIN,VAL,TEST@SEED`.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub num_classes: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct TreeOpts {
    #[arg(long)]
    pub height: Option<usize>,
    /// `exhaustive` or `monte-carlo`.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Pairs evaluated per Monte Carlo merge.
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct RefineOpts {
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Critic training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub alternations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EntropyArgs {
    #[command(flatten)]
    pub common: Common,
    /// `node,block` lines giving a flat partition to evaluate.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Tree JSON to evaluate.
    #[arg(long)]
    pub tree: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub tree: TreeOpts,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub tree_opts: TreeOpts,
    #[command(flatten)]
    pub refine: RefineOpts,
    /// Tree JSON to refine; built first when absent.
    #[arg(long)]
    pub tree: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub tree_opts: TreeOpts,
    #[command(flatten)]
    pub refine: RefineOpts,
    /// `node-c`, `existence`, `direction` or `link-c`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub p_rw: Option<f64>,
    #[arg(long)]
    pub s_rw: Option<f64>,
    #[arg(long)]
    pub c_rw: Option<f64>,
    /// Walk length.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub train_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train on this tree as is, skipping build and refinement.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Ablations to switch off: diverse-knowledge, personalized-transfer,
    /// tree-walk, kd-loss.
    #[arg(long, value_delimiter = ',')]
    pub without: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct WalkArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
}

/// Exit code for an error: 2 for usage and configuration problems, 1 otherwise.
fn exit_code(e: &EdenError) -> u8 {
    match e {
        EdenError::Config(_) | EdenError::Parameter(_) | EdenError::File { .. } | EdenError::Parse { .. } => 2,
        _ => 1,
    }
}

fn report(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report("usage", e.to_string().trim(), 2),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            return report("runtime", &e.to_string(), 1);
        }
    }
    match commands::run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => report(e.kind(), &e.to_string(), exit_code(&e)),
    }
}
