//! `egoact`: dataset synthesis, training, augmentation, evaluation and
//! verification from the command line.

mod commands;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "egoact", version, about = "Egocentric action recognition on precomputed features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random draw; required by stochastic commands
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON file with command parameters; flags override its fields
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (created if missing)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for data-parallel loops
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Do not print result tables
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic feature dataset or per-frame probability file
    Synth(SynthArgs),
    /// Train the latent-region frame scorer
    TrainFrame(TrainFrameArgs),
    /// Train the hierarchical sequence model
    TrainHlstm(TrainHlstmArgs),
    /// Grid search over beta from a phase-1 checkpoint
    GridBeta(GridBetaArgs),
    /// Score per-frame predictions or a trained sequence model
    Eval(EvalArgs),
    /// Visual (rotation and crop) or temporal (meta-sequence) augmentation
    Augment {
        #[command(subcommand)]
        kind: AugmentKind,
    },
    /// Finite-difference gradient verification suite
    Gradcheck(GradcheckArgs),
    /// Edit-distance similarity of shot-label sequences
    Levenshtein(LevenshteinArgs),
    /// Locate the hands region from a skin mask and wrist points
    PrimaryRegion(PrimaryRegionArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PlacementArg {
    Primary,
    SecondaryOnly,
    Both,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Emit per-frame probability sequences with Markov shot labels
    #[arg(long)]
    pub frame_probs: bool,
    #[arg(long)]
    pub actions: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Frames per shot as MIN:MAX
    #[arg(long, value_parser = parse_range)]
    pub frames: Option<(usize, usize)>,
    /// Shots per sequence as MIN:MAX
    #[arg(long, value_parser = parse_range)]
    pub shots: Option<(usize, usize)>,
    /// Feature noise standard deviation
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long, value_enum)]
    pub placement: Option<PlacementArg>,
    /// Cyclic transitions: probability of moving to the next action
    #[arg(long)]
    pub transition_p: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub shot_noise: Option<f64>,
    #[arg(long)]
    pub frame_noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainFrameArgs {
    /// Training dataset (JSON lines)
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Secondary regions sampled per frame during training
    #[arg(long)]
    pub regions: Option<usize>,
    /// Ablation without secondary regions
    #[arg(long)]
    pub primary_only: bool,
    /// Datasets to score with the trained model; writes `<stem>.probs.jsonl`
    #[arg(long)]
    pub predict: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct HlstmTrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub decay_interval: Option<usize>,
    /// Global gradient-norm clip
    #[arg(long)]
    pub clip: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainHlstmArgs {
    /// Per-frame probability file
    #[arg(long)]
    pub probs: PathBuf,
    /// Validation probabilities; keeps the best validation epoch
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Phase-1 checkpoint to continue from
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Allow beta > 0 without a phase-1 checkpoint
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub train: HlstmTrainFlags,
}

#[derive(Args, Debug)]
pub struct GridBetaArgs {
    #[arg(long)]
    pub probs: PathBuf,
    /// Validation probabilities (defaults to the training file)
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Phase-1 checkpoint
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Comma-separated grid
    #[arg(long, value_delimiter = ',')]
    pub betas: Vec<f64>,
    #[command(flatten)]
    pub train: HlstmTrainFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Both,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Per-frame probability file with ground-truth labels
    #[arg(long)]
    pub probs: PathBuf,
    /// Hierarchical checkpoint; without it the input probabilities are scored
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset supplying action verb/object names
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub format: FormatArg,
}

#[derive(Subcommand, Debug)]
pub enum AugmentKind {
    /// Per-frame rotation angle, inscribed crop and transformed primary box
    Geom(GeomArgs),
    /// Re-order shots by a random meta-sequence expansion
    Temporal(TemporalArgs),
}

#[derive(Args, Debug)]
pub struct GeomArgs {
    #[arg(long)]
    pub width: f64,
    #[arg(long)]
    pub height: f64,
    #[arg(long)]
    pub frames: usize,
    /// Maximum rotation (radians unless --degrees)
    #[arg(long)]
    pub theta_max: f64,
    #[arg(long)]
    pub degrees: bool,
    /// Oscillation cycles over the clip
    #[arg(long, default_value_t = 1.0)]
    pub cycles: f64,
    /// Sine terms as WEIGHT:FREQ pairs, comma-separated
    #[arg(long, value_delimiter = ',', default_value = "1:1")]
    pub terms: Vec<String>,
    /// Primary box as X,Y,W,H
    #[arg(long, value_parser = parse_rect)]
    pub primary: Option<[f64; 4]>,
}

#[derive(Args, Debug)]
pub struct TemporalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Meta-sequence files or directories of `*.json`
    #[arg(long, required = true)]
    pub meta: Vec<PathBuf>,
    #[arg(long)]
    pub p_swap: Option<f64>,
    #[arg(long)]
    pub p_skip: Option<f64>,
    #[arg(long)]
    pub p_add: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub scorer_instances: Option<usize>,
    #[arg(long)]
    pub hlstm_instances: Option<usize>,
    /// Negate one gradient block before checking
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Args, Debug)]
pub struct LevenshteinArgs {
    /// Feature dataset whose shot labels are compared
    #[arg(long, conflicts_with = "probs")]
    pub data: Option<PathBuf>,
    /// Probability file whose shot labels are compared
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// JSON object mapping sequence id to activity; restricts pairs to one activity
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Two label sequences (comma-separated ids) to compare directly
    #[arg(long, value_delimiter = ',', requires = "b")]
    pub a: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', requires = "a")]
    pub b: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct PrimaryRegionArgs {
    #[arg(long)]
    pub width: f64,
    #[arg(long)]
    pub height: f64,
    /// Skin mask (PBM, P1 or P4)
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Wrist point as X,Y (at most two)
    #[arg(long, value_parser = parse_point)]
    pub wrist: Vec<(f64, f64)>,
    /// Fixed box as W,H (default: a quarter of each frame side)
    #[arg(long, value_parser = parse_point)]
    pub fixed_box: Option<(f64, f64)>,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(':').unwrap_or((s, s));
    let lo = lo.trim().parse().map_err(|e| format!("bad range '{s}': {e}"))?;
    let hi = hi.trim().parse().map_err(|e| format!("bad range '{s}': {e}"))?;
    Ok((lo, hi))
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad number in '{s}': {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got '{s}'"));
    }
    Ok(v)
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let v = parse_floats(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_rect(s: &str) -> Result<[f64; 4], String> {
    let v = parse_floats(s, 4)?;
    Ok([v[0], v[1], v[2], v[3]])
}

fn dispatch(cli: &Cli) -> Result<i32, Failure> {
    let c = &cli.common;
    match &cli.command {
        Command::Synth(a) => commands::synth(c, a),
        Command::TrainFrame(a) => commands::train_frame(c, a),
        Command::TrainHlstm(a) => commands::train_hlstm_cmd(c, a),
        Command::GridBeta(a) => commands::grid_beta(c, a),
        Command::Eval(a) => commands::eval(c, a),
        Command::Augment { kind: AugmentKind::Geom(a) } => commands::augment_geom(c, a),
        Command::Augment { kind: AugmentKind::Temporal(a) } => commands::augment_temporal(c, a),
        Command::Gradcheck(a) => commands::gradcheck(c, a),
        Command::Levenshtein(a) => commands::levenshtein_cmd(c, a),
        Command::PrimaryRegion(a) => commands::primary_region_cmd(c, a),
    }
}

#[cfg(feature = "parallel")]
fn run(cli: &Cli) -> Result<i32, Failure> {
    match cli.common.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::config(format!("cannot start {n} threads: {e}")))?;
            pool.install(|| dispatch(cli))
        }
        None => dispatch(cli),
    }
}

#[cfg(not(feature = "parallel"))]
fn run(cli: &Cli) -> Result<i32, Failure> {
    dispatch(cli)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
