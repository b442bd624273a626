//! `rrnet`: encode, build datasets, train, filter and evaluate from the shell.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rrnet", version, about = "Residual-guided CNN in-loop filter toolkit")]
pub struct Cli {
    /// `key = value` run configuration; missing keys keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Intra-code one PGM image and write its reconstruction, residual and partition.
    Encode(EncodeArgs),
    /// Encode images at several QPs and cut them into training patches.
    Dataset(DatasetArgs),
    /// Train a fresh model on one QP's patches.
    Train(TrainArgs),
    /// Continue training a model on another QP's patches.
    Finetune(FinetuneArgs),
    /// Filter a coded frame with a trained model.
    Apply(ApplyArgs),
    /// Ablation report: BD-rate and PSNR gain of each model set over a test corpus.
    Eval(EvalArgs),
    /// BD-rate of a test RD curve against an anchor curve (CSV `rate,psnr`).
    Bdrate(BdrateArgs),
    /// PSNR-gain matrix of per-QP models applied across QPs.
    Crossqp(CrossqpArgs),
    /// Write the channels of one internal layer as grayscale images.
    DumpFeatures(DumpFeaturesArgs),
    /// Finite-difference check of every differentiable op and the full network.
    Gradcheck(GradcheckArgs),
    /// Write a deterministic synthetic image corpus.
    Corpus(CorpusArgs),
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long = "in", value_name = "PGM")]
    pub input: PathBuf,
    #[arg(long)]
    pub qp: u8,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Skip quantization: the reconstruction equals the input.
    #[arg(long)]
    pub lossless: bool,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Source images (PGM).
    #[arg(long, num_args = 1.., required = true, value_name = "PGM")]
    pub images: Vec<PathBuf>,
    /// Comma-separated QPs; defaults to the config's `qps`.
    #[arg(long, value_delimiter = ',')]
    pub qps: Vec<u8>,
    /// Patch stride; defaults to the config's `patch_stride`.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "TSV")]
    pub manifest: PathBuf,
    #[arg(long, default_value = "RRNET")]
    pub variant: String,
    /// Train on this QP's records only; required when the manifest mixes QPs.
    #[arg(long)]
    pub qp: Option<u8>,
    /// Defaults to the config's `epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "RRNW")]
    pub out: PathBuf,
    /// Also write the per-epoch mean loss as CSV.
    #[arg(long, value_name = "CSV")]
    pub history: Option<PathBuf>,
    /// Print each epoch's loss to standard error.
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long, value_name = "RRNW")]
    pub base: PathBuf,
    #[arg(long, value_name = "TSV")]
    pub manifest: PathBuf,
    #[arg(long)]
    pub qp: Option<u8>,
    /// Defaults to the config's `finetune_epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "RRNW")]
    pub out: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub history: Option<PathBuf>,
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct PlaneArgs {
    #[arg(long, value_name = "PGM")]
    pub recon: PathBuf,
    /// Residual plane (RESI); needed by RRNET and DUAL_EDSR.
    #[arg(long, value_name = "RESI")]
    pub residual: Option<PathBuf>,
    /// Partition text; needed by PARTITION_RECON.
    #[arg(long, value_name = "TXT")]
    pub partition: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long, value_name = "RRNW")]
    pub weights: PathBuf,
    #[command(flatten)]
    pub planes: PlaneArgs,
    #[arg(long, value_name = "PGM")]
    pub out: PathBuf,
    /// Report PSNR before and after filtering against this original.
    #[arg(long, value_name = "PGM")]
    pub original: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Test images; a sequence's class is its parent directory name.
    #[arg(long, num_args = 1.., required = true, value_name = "PGM")]
    pub images: Vec<PathBuf>,
    /// One weights file per (variant, qp) pair.
    #[arg(long, num_args = 1.., required = true, value_name = "RRNW")]
    pub models: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub qps: Vec<u8>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BdrateArgs {
    #[arg(long, value_name = "CSV")]
    pub anchor: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub test: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossqpArgs {
    #[arg(long, num_args = 1.., required = true, value_name = "PGM")]
    pub images: Vec<PathBuf>,
    /// Per-QP models of a single variant.
    #[arg(long, num_args = 2.., required = true, value_name = "RRNW")]
    pub models: Vec<PathBuf>,
    /// Also write the delta matrix as CSV.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpFeaturesArgs {
    #[arg(long, value_name = "RRNW")]
    pub weights: PathBuf,
    #[command(flatten)]
    pub planes: PlaneArgs,
    /// Layer to export; omit to list the available layers.
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Defaults to the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coordinates sampled per parameter tensor in the network check.
    #[arg(long, default_value_t = 3)]
    pub coords: usize,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Defaults to the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Index of the first image; lets disjoint sets share a seed.
    #[arg(long, default_value_t = 0)]
    pub first: u64,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
