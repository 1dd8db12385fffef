//! `partpq`: evaluate, merge and inspect part-aware panoptic segmentations.

mod commands;
mod inputs;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use partpq_core::codec::MapFormat;
use partpq_core::merge::Strategy;
use partpq_core::metrics::PartUniverse;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "partpq", version, about = "Part-aware panoptic segmentation tools")]
pub struct Cli {
    /// Dataset spec: a JSON file, or `cpp` / `ppp` for the builtin specs.
    #[arg(long, global = true)]
    pub spec: Option<String>,
    /// Label map storage format.
    #[arg(long, global = true, default_value = "packed", value_parser = parse_format)]
    pub format: MapFormat,
    /// Worker threads; defaults to the available hardware parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// JSON array of stems to process instead of pairing whole directories.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_format(s: &str) -> Result<MapFormat, String> {
    s.parse()
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score predictions with PartPQ, PQ, mIOU and mPA.
    Evaluate(EvaluateArgs),
    /// Score predictions with plain PQ.
    Pq(PqArgs),
    /// Merge panoptic and part predictions into part-aware maps.
    Merge(MergeArgs),
    /// Apply a part grouping to part predictions.
    Remap(RemapArgs),
    /// Semantic information gain of method A over method B.
    Sig(SigArgs),
    /// Check label maps against the spec.
    Validate(ValidateArgs),
    /// Generate synthetic ground truth and prediction pairs.
    Synth(SynthArgs),
    /// Render label maps as RGB images.
    Colorize(ColorizeArgs),
}

#[derive(Args, Debug)]
pub struct PairArgs {
    /// Ground-truth directory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Report path; `.csv` writes CSV, anything else JSON.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Print per-class rows.
    #[arg(long)]
    pub per_class: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Part classes scored in the per-segment part IOU.
    #[arg(long, value_enum, default_value_t = UniverseArg::Present)]
    pub part_universe: UniverseArg,
}

#[derive(Args, Debug)]
pub struct PqArgs {
    #[command(flatten)]
    pub pair: PairArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UniverseArg {
    /// Part classes present in the gt or prediction segment.
    Present,
    /// Every part class of the scene class.
    All,
}

impl From<UniverseArg> for PartUniverse {
    fn from(u: UniverseArg) -> Self {
        match u {
            UniverseArg::Present => PartUniverse::Present,
            UniverseArg::All => PartUniverse::All,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Topdown,
    Conservative,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Topdown => Strategy::TopDown,
            StrategyArg::Conservative => Strategy::Conservative,
        }
    }
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    /// Panoptic predictions, in `--format`.
    #[arg(long)]
    pub panoptic: PathBuf,
    /// Part predictions as 16-bit PNGs.
    #[arg(long)]
    pub parts: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::Topdown)]
    pub strategy: StrategyArg,
    /// Read part values as group ids of this grouping.
    #[arg(long)]
    pub grouping: Option<String>,
    /// Output directory for merged maps.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct RemapArgs {
    /// Ungrouped part predictions as 16-bit PNGs.
    #[arg(long)]
    pub parts: PathBuf,
    #[arg(long)]
    pub grouping: String,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    /// Label maps in `--format`.
    Panoptic,
    /// Ungrouped part PNGs.
    Parts,
}

#[derive(Args, Debug)]
pub struct SigArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Panoptic)]
    pub a_kind: KindArg,
    #[arg(long, value_enum, default_value_t = KindArg::Panoptic)]
    pub b_kind: KindArg,
    /// JSON report path.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Map files or directories of maps.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Violations printed per file.
    #[arg(long, default_value_t = 20)]
    pub limit: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; receives `gt/`, `pred/` and `recipes.json`.
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub min_size: u32,
    #[arg(long, default_value_t = 128)]
    pub max_size: u32,
    /// Upper bound on sampled perturbation rates.
    #[arg(long, default_value_t = 0.3)]
    pub max_rate: f64,
    /// A JSON array of recipes to render instead of random ones.
    #[arg(long)]
    pub recipes: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ColorizeArgs {
    /// A map file or a directory of maps.
    pub input: PathBuf,
    /// Output PNG, or a directory when the input is one.
    #[arg(long, short)]
    pub output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PARTPQ_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(commands::Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
