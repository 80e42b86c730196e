//! Command-line driver for the demand forecasting pipeline.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "vgnn", version, about = "Multi-view virtual-graph demand forecasting")]
pub struct Cli {
    /// Pipeline configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bin trip records into a demand tensor (and an OD tensor when the schema has dropoffs).
    Ingest(IngestArgs),
    /// Build virtual nodes and the distance/correlation/mobility graphs.
    Graph(GraphArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint against the naive baselines on the test split.
    Eval(EvalArgs),
    /// Train and evaluate every ablation variant over several seeds.
    Ablate(AblateArgs),
    /// Generate a seeded synthetic demand set with planted clusters.
    Synth(SynthArgs),
    /// Run the gradient-check and oracle suites.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Glob over trip CSV files.
    #[arg(long)]
    pub input: Option<String>,
    /// Trip schema (TOML); defaults to the public 2014 Uber layout.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Grid dimensions as ROWSxCOLS.
    #[arg(long)]
    pub grid: Option<String>,
    /// lat_min,lat_max,lon_min,lon_max
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Slot width in seconds.
    #[arg(long)]
    pub bin: Option<i64>,
    /// Window start (unix seconds or YYYY-MM-DD[THH:MM:SS], UTC); defaults to the first trip's slot.
    #[arg(long)]
    pub start: Option<String>,
    /// Window end, exclusive; defaults to the end of the last trip's slot.
    #[arg(long)]
    pub end: Option<String>,
    #[arg(long, default_value = "demand.bin")]
    pub out: PathBuf,
    /// OD output; defaults to od.bin beside the demand tensor.
    #[arg(long)]
    pub od_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub demand: Option<PathBuf>,
    #[arg(long)]
    pub od: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub top_frac: Option<f64>,
    #[arg(long, default_value = "graphs.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Channel width C1.
    #[arg(long)]
    pub c1: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub demand: Option<PathBuf>,
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Variant name, e.g. D-GNN, SD-GNN; defaults to the full model.
    #[arg(long, default_value = "DMVST-GNN")]
    pub variant: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long, default_value = "ckpt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub demand: Option<PathBuf>,
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub demand: Option<PathBuf>,
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated variant names; naming a mobility variant without a
    /// mobility graph is an error.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Parses `argv` (program name first), runs the stage and returns the exit
/// code: 0 on success, 1 on failure, 2 on a usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::run(&cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
