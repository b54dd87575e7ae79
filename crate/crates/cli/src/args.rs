use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcm_core::classify::forest;
use dcm_core::classify::nb::DEFAULT_ALPHA;
use dcm_core::rollup::{RootPolicy, DEFAULT_MIN_SUPPORT};
use dcm_core::sweep::DEFAULT_EPSILON;
use dcm_core::{BreakdownLevel, ClassCode};

#[derive(Debug, Parser)]
#[command(name = "dcm", version, about = "Hierarchy-aware classification of plant equipment records")]
pub struct Cli {
    /// Worker threads for forest training and sweeps [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory that receives all artifacts and manifest.json
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus from a JSON config
    Generate(GenerateArgs),
    /// Validate a records CSV against hierarchies and split it
    Ingest(IngestArgs),
    /// Compute the class rollup for one level
    Rollup(RollupArgs),
    /// Train a classifier on the rolled-up training split
    Train(TrainArgs),
    /// Evaluate flat and/or dynamic classification on the validation split
    Eval(EvalArgs),
    /// Sweep the rollup threshold and select the smallest adequate v
    Sweep(SweepArgs),
    /// Predict classes for records with a trained model
    Classify(ClassifyArgs),
    /// Emit ClassifiedAs triples as N-Triples
    Map(MapArgs),
    /// List subjects classified as a class
    Query(QueryArgs),
    /// Run the HTTP review service
    Serve(ServeArgs),
    /// Print evaluation reports as text tables
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Nb,
    Rf,
}

impl ModelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::Nb => "nb",
            ModelChoice::Rf => "rf",
        }
    }
}

pub fn parse_level(s: &str) -> Result<BreakdownLevel, String> {
    s.parse().map_err(|_| format!("unknown level {s:?}; expected BL0, BL1 or BL2"))
}

pub fn parse_code(s: &str) -> Result<ClassCode, String> {
    ClassCode::parse(s).map_err(|e| e.to_string())
}

pub fn parse_root_policy(s: &str) -> Result<RootPolicy, String> {
    s.parse().map_err(|e: dcm_core::rollup::RollupError| e.to_string())
}

/// `LEVEL=PATH`, e.g. `BL1=hierarchy/bl1.txt`.
pub fn parse_level_path(s: &str) -> Result<(BreakdownLevel, PathBuf), String> {
    let (level, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LEVEL=PATH, got {s:?}"))?;
    Ok((parse_level(level)?, existing(path)?))
}

pub fn existing(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.exists() {
        Ok(p)
    } else {
        Err(format!("{s} does not exist"))
    }
}

/// `start:end:step` (inclusive end) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("{t:?} is not a non-negative integer"));
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [start, end, step] => {
            let (start, end, step) = (num(start)?, num(end)?, num(step)?);
            if step == 0 || start > end {
                return Err(format!("grid {s:?} needs step > 0 and start <= end"));
            }
            (start..=end).step_by(step as usize).collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(format!("grid {s:?} is neither start:end:step nor a list")),
    };
    Ok(Grid(grid))
}

pub fn parse_modes(s: &str) -> Result<Modes, String> {
    let mut out = Vec::new();
    for m in s.split(',') {
        let mode = match m.trim().to_ascii_lowercase().as_str() {
            "flat" => Mode::Flat,
            "dynamic" => Mode::Dynamic,
            _ => return Err(format!("unknown mode {m:?}; expected flat, dynamic or flat,dynamic")),
        };
        if !out.contains(&mode) {
            out.push(mode);
        }
    }
    out.sort();
    Ok(Modes(out))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid(pub Vec<u64>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Modes(pub Vec<Mode>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mode {
    Flat,
    Dynamic,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Synthetic corpus config (JSON)
    #[arg(long, value_parser = existing)]
    pub config: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config record count
    #[arg(long)]
    pub records: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Records CSV: record_id,plant_id,description,bl0,bl1,bl2
    #[arg(long, value_parser = existing)]
    pub data: PathBuf,
    /// Hierarchy file per level, as LEVEL=PATH; repeatable
    #[arg(long = "hierarchy", value_parser = parse_level_path)]
    pub hierarchies: Vec<(BreakdownLevel, PathBuf)>,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Keep every record in the training split
    #[arg(long)]
    pub no_split: bool,
    /// Stratify the split by the labels of this level
    #[arg(long, value_parser = parse_level)]
    pub stratify: Option<BreakdownLevel>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Split dataset written by `ingest` or `generate`
    #[arg(long, value_parser = existing)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_level)]
    pub level: BreakdownLevel,
    /// Hierarchy file of the level
    #[arg(long, value_parser = existing)]
    pub hierarchy: PathBuf,
}

#[derive(Debug, Args)]
pub struct RollupOpts {
    #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
    pub min_support: u64,
    /// keep_if_min_support or discard_below_v
    #[arg(long, default_value = "keep_if_min_support", value_parser = parse_root_policy)]
    pub root_policy: RootPolicy,
}

#[derive(Debug, Args)]
pub struct ModelOpts {
    #[arg(long, value_enum, default_value = "nb")]
    pub model: ModelChoice,
    /// Forest size
    #[arg(long, default_value_t = forest::DEFAULT_TREES)]
    pub trees: usize,
    /// Forest seed
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Naive Bayes smoothing
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct RollupArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Minimum samples a class needs to stay unmerged; 0 disables merging
    #[arg(long)]
    pub v: u64,
    #[command(flatten)]
    pub rollup: RollupOpts,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelOpts,
    #[arg(long, default_value_t = 0)]
    pub v: u64,
    #[command(flatten)]
    pub rollup: RollupOpts,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelOpts,
    /// flat, dynamic or flat,dynamic
    #[arg(long, default_value = "flat,dynamic", value_parser = parse_modes)]
    pub mode: Modes,
    /// Rollup threshold of the dynamic mode
    #[arg(long, default_value_t = 30)]
    pub v: u64,
    #[command(flatten)]
    pub rollup: RollupOpts,
    /// Score predictions from this CSV instead of training a model
    #[arg(long, value_parser = existing)]
    pub external: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelOpts,
    /// start:end:step or a comma-separated list
    #[arg(long, default_value = "0:200:10", value_parser = parse_grid)]
    pub grid: Grid,
    /// Macro-F1 target
    #[arg(long)]
    pub t: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Also write an SVG plot of the curve
    #[arg(long)]
    pub plot: bool,
    #[command(flatten)]
    pub rollup: RollupOpts,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Model artifact written by `train`
    #[arg(long, value_parser = existing)]
    pub model: PathBuf,
    /// Dataset JSON or records CSV
    #[arg(long, value_parser = existing)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Dataset JSON or records CSV
    #[arg(long, value_parser = existing)]
    pub input: PathBuf,
    /// Predictions CSV per level, as LEVEL=PATH; repeatable
    #[arg(long = "predictions", value_parser = parse_level_path)]
    pub predictions: Vec<(BreakdownLevel, PathBuf)>,
    /// Map the records' own labels instead of predictions
    #[arg(long, conflicts_with = "predictions")]
    pub labels: bool,
    /// Mapping context JSON (base_iri, vocab_prefix, class_iri_template)
    #[arg(long, value_parser = existing)]
    pub context: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// N-Triples file written by `map`
    #[arg(long, value_parser = existing)]
    pub kb: PathBuf,
    #[arg(long, value_parser = parse_code)]
    pub class: ClassCode,
    #[arg(long, value_parser = parse_level)]
    pub level: BreakdownLevel,
    #[arg(long, value_parser = existing)]
    pub hierarchy: PathBuf,
    /// Include subjects classified as any subclass
    #[arg(long)]
    pub subclasses: bool,
    #[arg(long, value_parser = existing)]
    pub context: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_parser = existing)]
    pub dataset: PathBuf,
    /// Hierarchy file per level, as LEVEL=PATH; repeatable
    #[arg(long = "hierarchy", value_parser = parse_level_path, required = true)]
    pub hierarchies: Vec<(BreakdownLevel, PathBuf)>,
    /// Models to serve for every level; repeatable
    #[arg(long = "model", value_enum, default_values = ["nb"])]
    pub models: Vec<ModelChoice>,
    #[arg(long, default_value_t = forest::DEFAULT_TREES)]
    pub trees: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub v: u64,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Built review UI to serve at /
    #[arg(long = "static", value_parser = existing)]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value = "corrections.jsonl")]
    pub corrections: PathBuf,
    /// Run a threshold sweep per snapshot with this grid
    #[arg(long, value_parser = parse_grid)]
    pub sweep_grid: Option<Grid>,
    #[arg(long, default_value_t = 0.85)]
    pub t: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files written by `eval`
    #[arg(required = true, value_parser = existing)]
    pub reports: Vec<PathBuf>,
}
