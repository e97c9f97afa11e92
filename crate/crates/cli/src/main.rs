//! `houston`: generate synthetic cascade streams, run online inference,
//! score results and benchmark scaling.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use houston::smc::{Mode, WeightRule};
use serde::{Serialize, Serializer};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "houston",
    version,
    about = "Online clustering of text cascades with per-topic diffusion networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event stream with ground-truth sidecars.
    Generate(GenerateArgs),
    /// Run online inference over an event stream.
    Infer(InferArgs),
    /// Score inference results against ground truth into a CSV report.
    Eval(EvalArgs),
    /// Time inference on generated streams of doubling size.
    Bench(BenchArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Base {
    /// Preferential attachment.
    Pl,
    /// Independent edges.
    Er,
    /// Arcs read from --edge-file.
    File,
}

fn ser_display<T: std::fmt::Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct NetworkArgs {
    /// Base network model.
    #[arg(long, value_enum, default_value_t = Base::Pl)]
    pub base: Base,
    /// Edges added per node by preferential attachment.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Edge probability of the random graph [default: density matched to --m].
    #[arg(long)]
    pub p: Option<f64>,
    /// Edge list used with --base file.
    #[arg(long, required_if_eq("base", "file"))]
    pub edge_file: Option<PathBuf>,
    /// Number of nodes in the base network.
    #[arg(long, default_value_t = 500)]
    pub n_nodes: usize,
    /// Number of subnetworks, one per topic.
    #[arg(long, default_value_t = 5)]
    pub subnets: usize,
    /// Nodes sampled into each subnetwork.
    #[arg(long, default_value_t = 250)]
    pub subnet_size: usize,
    /// Vocabulary size.
    #[arg(long, default_value_t = 100)]
    pub vocab: usize,
    /// Words per document.
    #[arg(long, default_value_t = 5)]
    pub words: usize,
    /// Per-cascade observation window [default: 10 / mean rate].
    #[arg(long)]
    pub window: Option<f64>,
    /// Dirichlet concentration of the topic word distributions.
    #[arg(long, default_value_t = 0.1)]
    pub topic_concentration: f64,
    /// Average number of simultaneously running cascades.
    #[arg(long, default_value_t = 10.0)]
    pub concurrency: f64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Total number of events.
    #[arg(long, default_value_t = 55_000)]
    pub events: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stream file; sidecars are written next to it.
    #[arg(long, short, default_value = "data.hst")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EngineArgs {
    /// houston, nrxdm or netrate.
    #[arg(long, default_value = "houston")]
    #[serde(serialize_with = "ser_display")]
    pub mode: Mode,
    /// Parallel SMC runs (particles).
    #[arg(long, default_value_t = 4)]
    pub runs: usize,
    /// Symmetric Dirichlet concentration of the language model.
    #[arg(long, default_value_t = 0.1)]
    pub theta0: f64,
    /// Exogenous rate of every cluster.
    #[arg(long, default_value_t = 0.001)]
    pub lambda0: f64,
    /// Concentration of the Dirichlet-process prior (nrxdm mode).
    #[arg(long, default_value_t = 1.0)]
    pub alpha0: f64,
    /// Hazard cutoff; `inf` disables it.
    #[arg(long, default_value_t = f64::INFINITY)]
    #[serde(serialize_with = "ser_display")]
    pub t_old: f64,
    /// Minimum new events in a cluster between two network refits.
    #[arg(long, default_value_t = 10)]
    pub refit_period: usize,
    /// Refits also wait for the cluster to grow by this fraction.
    #[arg(long, default_value_t = 0.1)]
    pub refit_growth: f64,
    /// Resample when the effective sample size drops below this fraction of --runs.
    #[arg(long, default_value_t = 0.5)]
    pub ess_threshold: f64,
    /// Particle weight update: marginal or sampled.
    #[arg(long, default_value = "marginal")]
    #[serde(serialize_with = "ser_display")]
    pub weight: WeightRule,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads [default: one per run, capped by HOUSTON_THREADS].
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct InferArgs {
    /// Input event stream.
    pub input: PathBuf,
    /// Output directory.
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Print diagnostics every 10,000 events.
    #[arg(long)]
    pub progress: bool,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvalArgs {
    /// A stream and its inference output directory (or `truth` to score the
    /// ground truth itself). Repeatable.
    #[arg(long = "run", num_args = 2, value_names = ["STREAM", "RESULT"], action = ArgAction::Append, required = true)]
    pub runs: Vec<PathBuf>,
    /// Dataset label for every row [default: stream file stem].
    #[arg(long)]
    pub dataset: Option<String>,
    /// Predicted rates at or below this are absent edges.
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
    #[arg(long, short, default_value = "report.csv")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Smallest stream size; each doubling adds a row.
    #[arg(long, default_value_t = 5_000)]
    pub events: usize,
    #[arg(long, default_value_t = 2)]
    pub doublings: usize,
    /// Timings per size; the fastest is kept.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, short, default_value = "scaling.csv")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse_from(std::iter::once("houston".to_string()).chain(argv.iter().cloned())) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::dispatch(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("houston: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `houston --help` for usage");
            }
            e.exit_code()
        }
    }
}
