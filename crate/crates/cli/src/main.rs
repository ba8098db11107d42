use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
mod data;

use data::DataArgs;

#[derive(Parser)]
#[command(name = "graphda", version, about = "Cross-graph domain adaptation for node classification")]
struct Cli {
    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target pair.
    Synth(SynthArgs),
    /// Precompute the diffusion caches of a dataset.
    Diffuse(DiffuseArgs),
    /// Train one model and write its report and checkpoint.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint on the target graph.
    Eval(EvalArgs),
    /// Train a grid of variants, seeds and label budgets.
    Sweep(SweepArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub nodes: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.02)]
    pub intra: f64,
    #[arg(long, default_value_t = 0.004)]
    pub inter: f64,
    #[arg(long, default_value_t = 64)]
    pub attr_dim: usize,
    #[arg(long, default_value_t = 0.6)]
    pub strength: f64,
    #[arg(long, default_value_t = 0.4)]
    pub shift: f64,
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct DiffuseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 32)]
    pub topk: usize,
    /// Recompute caches that already exist.
    #[arg(long)]
    pub force: bool,
}

/// Hyperparameter overrides shared by `train` and `sweep`; applied after `--config`.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub iters_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long = "lambda2-max")]
    pub lambda2_max: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Comma-separated per-depth neighbor sample sizes, e.g. `20,20`.
    #[arg(long)]
    pub sample_sizes: Option<String>,
    /// Comma-separated layer widths, e.g. `1024,64`.
    #[arg(long)]
    pub hidden_dims: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Any config key, e.g. `--set lambda2_mode=clamp`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Components to remove: cl, gv, lv, da. Repeatable or comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    /// Rerun exactly the configuration recorded in a previous manifest.
    #[arg(long, conflicts_with_all = ["config", "ablate"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also dump source and target embeddings as CSV.
    #[arg(long)]
    pub embeddings: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Output directory of a `train` run (holds manifest.json and model.ckpt).
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint to load instead of `<run>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate on other files than the ones recorded in the manifest.
    #[command(flatten)]
    pub data: DataArgs,
    /// Entropy thresholds of the divergence diagnostic, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Vec<f64>,
    /// Print one JSON object instead of text lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Variants such as `full`, `da`, `cl+da`; comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "full,cl,gv,lv,da")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Label budgets per class; defaults to the configured `n`.
    #[arg(long, value_delimiter = ',')]
    pub ns: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Bad user input; exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn one_line(s: &str) -> String {
    s.replace('\n', " ")
}

pub fn warn(msg: &str) {
    eprintln!("graphda: warning: {}", one_line(msg));
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<Usage>().is_some()
            || e.downcast_ref::<graphda::Error>().is_some_and(|g| g.is_validation())
            || e.downcast_ref::<serde_json::Error>().is_some()
    })
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("graphda: error: kind=validation: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let result = (|| -> Result<()> {
        if let Some(j) = cli.jobs {
            if j == 0 {
                return Err(Usage("--jobs must be >= 1".into()).into());
            }
            graphda::par::init_threads(j)?;
        }
        match cli.command {
            Command::Synth(a) => commands::synth(&a),
            Command::Diffuse(a) => commands::diffuse(&a),
            Command::Train(a) => commands::train(&a),
            Command::Eval(a) => commands::eval(&a),
            Command::Sweep(a) => commands::sweep(&a),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = if is_validation(&e) { ("validation", 1) } else { ("runtime", 2) };
            eprintln!("graphda: error: kind={kind}: {}", one_line(&format!("{e:#}")));
            ExitCode::from(code)
        }
    }
}
