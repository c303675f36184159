mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relocbench::change::VisualMode;
use relocbench::io::Split;

#[derive(Parser, Debug)]
#[command(
    name = "relocbench",
    version,
    about = "Evaluate camera re-localization in changing indoor scenes"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    /// Record frames whose difficulty or change scores fail as missing
    /// instead of aborting.
    #[arg(long, global = true)]
    pub keep_going: bool,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score prediction files against one or more scenes.
    Evaluate(EvaluateArgs),
    /// Score prediction files after sequence fusion over sliding windows.
    Fuse(FuseArgs),
    /// Re-aggregate saved per-frame results under a filter preset.
    Report(ReportArgs),
    /// Cumulative curves of several saved runs on shared axes.
    Curves(CurvesArgs),
    /// Per-frame change scores of rescans against the reference scan.
    Change(ChangeArgs),
    /// Per-frame difficulty scores and filter preset membership.
    Difficulty(DifficultyArgs),
    /// Write color, depth and label renderings of one frame.
    Render(RenderArgs),
    /// Write a synthetic scene and example prediction files.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SceneArgs {
    /// Scene manifest (TOML); repeat for several scenes.
    #[arg(long = "manifest", short = 'm', required = true)]
    pub manifests: Vec<PathBuf>,
    /// Splits to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', default_values = ["val", "test"], value_parser = parse_split)]
    pub splits: Vec<Split>,
}

#[derive(Args, Debug, Clone)]
pub struct MetricArgs {
    /// `E_a` threshold pair `METERS,DEGREES`; repeatable.
    #[arg(long = "abs-threshold", value_parser = parse_pair)]
    pub abs_thresholds: Vec<(f64, f64)>,
    /// `E_f` DCRE threshold; repeatable.
    #[arg(long = "dcre-threshold")]
    pub dcre_thresholds: Vec<f64>,
    /// DCRE above which a frame is a failure for the moved-object check.
    #[arg(long)]
    pub object_eps: Option<f64>,
    /// DCRE curve grid as `LO:HI:N`.
    #[arg(long, value_parser = parse_grid)]
    pub dcre_grid: Option<Grid>,
    /// Translation curve grid in meters as `LO:HI:N`.
    #[arg(long, value_parser = parse_grid)]
    pub translation_grid: Option<Grid>,
    /// Rotation curve grid in degrees as `LO:HI:N`.
    #[arg(long, value_parser = parse_grid)]
    pub rotation_grid: Option<Grid>,
    /// Filter preset applied before aggregation.
    #[arg(long, default_value = "no-filter")]
    pub preset: String,
}

#[derive(Args, Debug, Clone)]
pub struct ScoringArgs {
    /// Depth supersampling factor for DCRE.
    #[arg(long, default_value_t = 1)]
    pub supersampling: u32,
    /// Compute difficulty scores (implied by difficulty presets).
    #[arg(long)]
    pub difficulty: bool,
    /// Compute change scores (implied by change presets).
    #[arg(long)]
    pub change: bool,
    #[arg(long, value_enum, default_value_t = VisualModeArg::Grayscale)]
    pub visual_mode: VisualModeArg,
    /// Depth cache directory (default: $RELOCBENCH_CACHE_DIR, if set).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Never read or write cached depth maps.
    #[arg(long, conflicts_with = "cache_dir")]
    pub no_cache: bool,
    /// Skip curves.svg.
    #[arg(long)]
    pub no_svg: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Prediction file (`frame_id qw qx qy qz tx ty tz` per line); repeatable.
    #[arg(long = "predictions", short = 'p', required = true)]
    pub predictions: Vec<PathBuf>,
    /// Output directory; one subdirectory per method.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long = "predictions", short = 'p', required = true)]
    pub predictions: Vec<PathBuf>,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    /// Window length in frames; repeatable.
    #[arg(long = "window", default_values_t = relocbench::fusion::DEFAULT_WINDOWS)]
    pub windows: Vec<usize>,
    /// Translation similarity threshold in meters.
    #[arg(long, default_value_t = 0.10)]
    pub trans_thresh: f64,
    /// Rotation similarity threshold in degrees.
    #[arg(long, default_value_t = 10.0)]
    pub rot_thresh: f64,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directory (with frames.csv) or frames.csv file; repeatable.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Where to write the re-aggregated reports (one subdirectory per run).
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[arg(long)]
    pub no_svg: bool,
}

#[derive(Args, Debug)]
pub struct CurvesArgs {
    /// Run directory (with frames.csv) or frames.csv file; repeatable. The
    /// legend follows this order.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Args, Debug)]
pub struct ChangeArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Per-frame CSV output.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = VisualModeArg::Grayscale)]
    pub visual_mode: VisualModeArg,
}

#[derive(Args, Debug)]
pub struct DifficultyArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Per-frame CSV output.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    /// Only list frames passing this preset.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub supersampling: u32,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long, short = 'm')]
    pub manifest: PathBuf,
    #[arg(long)]
    pub sequence: String,
    #[arg(long)]
    pub frame: String,
    /// Render the reference scan instead of the sequence's rescan.
    #[arg(long)]
    pub reference: bool,
    /// Output directory for color.png, depth.png (16-bit, mm) and labels.png.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub test_sequences: usize,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 12)]
    pub train_frames: usize,
    #[arg(long, default_value_t = 64)]
    pub width: u32,
    #[arg(long, default_value_t = 48)]
    pub height: u32,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum VisualModeArg {
    Grayscale,
    PerChannel,
}

impl From<VisualModeArg> for VisualMode {
    fn from(v: VisualModeArg) -> Self {
        match v {
            VisualModeArg::Grayscale => VisualMode::Grayscale,
            VisualModeArg::PerChannel => VisualMode::PerChannel,
        }
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: relocbench::Error| e.to_string())
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected METERS,DEGREES")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    Ok((a, b))
}

/// Curve thresholds parsed from `LO:HI:N`.
#[derive(Debug, Clone)]
pub struct Grid(pub Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err("expected LO:HI:N".into());
    };
    let lo: f64 = lo.parse().map_err(|_| format!("bad number `{lo}`"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad number `{hi}`"))?;
    let n: usize = n.parse().map_err(|_| format!("bad sample count `{n}`"))?;
    if n == 0 {
        return Err("grid needs at least one sample".into());
    }
    Ok(Grid(relocbench::metrics::linspace(lo, hi, n)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RELOCBENCH_LOG")
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
