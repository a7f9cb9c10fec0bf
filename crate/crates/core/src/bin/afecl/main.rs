//! `afecl` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status plus message for a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn config(msg: impl std::fmt::Display) -> Self {
        Self { code: 2, msg: msg.to_string() }
    }
    pub fn data(msg: impl std::fmt::Display) -> Self {
        Self { code: 3, msg: msg.to_string() }
    }
    pub fn numeric(msg: impl std::fmt::Display) -> Self {
        Self { code: 4, msg: msg.to_string() }
    }
    pub fn other(msg: impl std::fmt::Display) -> Self {
        Self { code: 1, msg: msg.to_string() }
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "afecl", version, about = "Edge-level contrastive graph representation learning")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Upper bound on evaluation worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Pin single-threaded, fixed-order reductions.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an encoder and write a run directory.
    Train(TrainArgs),
    /// Linear-probe node classification on frozen embeddings.
    EvalNode(EvalNodeArgs),
    /// Link prediction with the frozen encoder on held-out edges.
    EvalLink(EvalLinkArgs),
    /// Finite-difference check of the full loss gradient on a random graph.
    Gradcheck(GradcheckArgs),
    /// Kept-edge statistics of Bernoulli edge sampling over many seeds.
    SampleStats(SampleStatsArgs),
    /// Recompute embeddings from a checkpoint and write them as TSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (meta.json, features.tsv, labels.tsv, edges.tsv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON training config; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Edge keep probability per epoch.
    #[arg(long = "ps")]
    pub edge_sample_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample this many negatives per anchor instead of using all nodes.
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Train with the anchor as its only positive.
    #[arg(long)]
    pub wo_ecl: bool,
    #[arg(long, value_enum)]
    pub anchors: Option<AnchorArg>,
    #[arg(long)]
    pub edge_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub loss_path: Option<LossPathArg>,
    /// Hold out edges for link prediction and train on the rest.
    #[arg(long)]
    pub link_split: bool,
    /// Train/validation/test fractions of the undirected edges.
    #[arg(long, default_value = "0.85,0.05,0.10", requires = "link_split")]
    pub link_ratios: String,
    /// Seed of the edge split (defaults to the training seed).
    #[arg(long, requires = "link_split")]
    pub link_split_seed: Option<u64>,
    /// Print the loss every this many epochs.
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum AnchorArg {
    Both,
    Canonical,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum LossPathArg {
    Auto,
    Naive,
    Gram,
}

#[derive(Args, Debug)]
pub struct EvalNodeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory; defaults to the one recorded in the run manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Labeled training nodes per class, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub c: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub splits: usize,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Validation nodes per class instead of 500 in total.
    #[arg(long)]
    pub val_per_class: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub val_total: usize,
    /// Output directory; defaults to `<ckpt>/eval-node`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum DecoderArg {
    Dot,
    Bilinear,
}

#[derive(Args, Debug)]
pub struct EvalLinkArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, value_enum, default_value = "bilinear")]
    pub decoder: DecoderArg,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `<ckpt>/eval-link`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Number of nodes in the random graph.
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 3)]
    pub features: usize,
    #[arg(long, default_value_t = 3)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 0.5)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
}

#[derive(Args, Debug)]
pub struct SampleStatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ps: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// First sampling seed; trial `t` uses `seed + t`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Print the statistics as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Destination TSV file.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Train(a) => commands::train(a, &cli.global, &argv),
        Command::EvalNode(a) => commands::eval_node(a, &cli.global, &argv),
        Command::EvalLink(a) => commands::eval_link(a, &cli.global, &argv),
        Command::Gradcheck(a) => commands::gradcheck(a, &cli.global),
        Command::SampleStats(a) => commands::sample_stats(a, &cli.global),
        Command::ExportEmbeddings(a) => commands::export_embeddings(a, &cli.global, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
