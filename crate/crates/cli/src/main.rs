mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use flickerforge::color::{BitDepth, Gamma};
use flickerforge::manifest::Split;

/// Exit status for bad arguments.
const EXIT_USAGE: u8 = 1;
/// Exit status for unreadable or invalid data.
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(name = "flickerforge", version, about = "Rolling-shutter flicker synthesis, estimation and removal")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
pub struct GlobalOpts {
    /// Transfer curve of PNG pixel values.
    #[arg(long, global = true, value_enum, default_value_t = GammaArg::Srgb)]
    pub gamma: GammaArg,
    /// Refuse to replace existing output files.
    #[arg(long, global = true)]
    pub no_clobber: bool,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum GammaArg {
    Linear,
    Srgb,
}

impl From<GammaArg> for Gamma {
    fn from(g: GammaArg) -> Self {
        match g {
            GammaArg::Linear => Gamma::Linear,
            GammaArg::Srgb => Gamma::Srgb,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DepthArg {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<DepthArg> for BitDepth {
    fn from(d: DepthArg) -> Self {
        match d {
            DepthArg::Eight => BitDepth::Eight,
            DepthArg::Sixteen => BitDepth::Sixteen,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Full,
    Half,
    Pwm,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Gain,
    Uniform,
    InverseVariance,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SsimModeArg {
    Luma,
    ChannelMean,
}

/// Flicker parameters given on the command line.
#[derive(Args, Clone)]
pub struct FlickerArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// PWM duty cycle in (0, 1].
    #[arg(long)]
    pub duty: Option<f64>,
    /// Grid frequency in Hz.
    #[arg(long, default_value_t = 50.0)]
    pub enf: f64,
    /// Row-scan frequency in rows per second.
    #[arg(long, default_value_t = 130e3)]
    pub frow: f64,
    /// Ambient-to-flicker ratio: one value or R,G,B.
    #[arg(long, value_delimiter = ',', num_args = 1..=3, default_value = "0")]
    pub k: Vec<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one flicker pattern to a clean image.
    Synth(SynthArgs),
    /// Generate a flickering burst from a clean image.
    Burst(BurstArgs),
    /// Composite a foreground clip onto a flickering burst and its clean background.
    Composite(CompositeArgs),
    /// Estimate flicker parameters from a burst.
    Estimate(EstimateArgs),
    /// Remove flicker from one frame or a burst.
    Deflicker(DeflickerArgs),
    /// Score restored images against references (PSNR and SSIM on stored code values).
    Evaluate(EvaluateArgs),
    /// Generate or check datasets.
    #[command(subcommand)]
    Manifest(ManifestCommand),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub flicker: FlickerArgs,
    /// AC phase at row 0, radians.
    #[arg(long, default_value_t = 0.0)]
    pub phase: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Output bit depth; defaults to the input's.
    #[arg(long, value_enum)]
    pub depth: Option<DepthArg>,
    /// Also write the spec as JSON.
    #[arg(long)]
    pub spec_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BurstArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long)]
    pub seed: u64,
    /// Flicker parameters; without --mode they are sampled from the seed.
    #[command(flatten)]
    pub flicker: FlickerArgs,
    /// Explicit per-frame phases instead of random ones.
    #[arg(long, value_delimiter = ',')]
    pub phases: Option<Vec<f64>>,
    /// Maximum rotation in degrees.
    #[arg(long, default_value_t = 3.0)]
    pub shake_rot: f64,
    /// Maximum translation in pixels.
    #[arg(long, default_value_t = 5.0)]
    pub shake_trans: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = DepthArg::Sixteen)]
    pub depth: DepthArg,
}

#[derive(Args)]
pub struct CompositeArgs {
    /// Directory with the flickering frames (frame_*.png).
    #[arg(long)]
    pub bg_dir: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    /// Clip description: frame/alpha PNG pairs and a placement.
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Modulate the foreground by each frame's row gain.
    #[arg(long)]
    pub flicker_on_fg: bool,
    /// Burst spec; defaults to spec.json in --bg-dir.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DepthArg::Sixteen)]
    pub depth: DepthArg,
}

#[derive(Args)]
pub struct EstimateArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub frames: Vec<PathBuf>,
    /// Known intensity frequency in cycles per row.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DeflickerArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub frames: Vec<PathBuf>,
    /// Known flicker: a burst spec.json, a list of specs or one spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Known intensity frequency for blind estimation.
    #[arg(long, conflicts_with = "spec")]
    pub nu: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = WeightingArg::Gain)]
    pub weighting: WeightingArg,
    #[arg(long, value_enum, default_value_t = DepthArg::Sixteen)]
    pub depth: DepthArg,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Single restored image.
    #[arg(long, requires = "gt", conflicts_with_all = ["pred_dir", "gt_dir", "manifest"])]
    pub pred: Option<PathBuf>,
    /// Single reference image.
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Restored images, named <scene_id>.png with --manifest, else matched by file name.
    #[arg(long, required_unless_present = "pred")]
    pub pred_dir: Option<PathBuf>,
    /// References; with --manifest defaults to each scene's clean image.
    #[arg(long)]
    pub gt_dir: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Only scenes of this split.
    #[arg(long, value_enum, requires = "manifest")]
    pub split: Option<SplitArg>,
    #[arg(long, value_enum, default_value_t = SsimModeArg::Luma)]
    pub ssim_mode: SsimModeArg,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum ManifestCommand {
    /// Build a synthetic dataset from a directory of backgrounds.
    Generate(GenerateArgs),
    /// Check a manifest against the files it references.
    Validate {
        manifest: PathBuf,
    },
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub backgrounds: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Fraction of scenes in the training split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, value_enum, default_value_t = DepthArg::Sixteen)]
    pub depth: DepthArg,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }

    let g = cli.global;
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&g, a),
        Command::Burst(a) => commands::burst(&g, a),
        Command::Composite(a) => commands::composite(&g, a),
        Command::Estimate(a) => commands::estimate(&g, a),
        Command::Deflicker(a) => commands::deflicker(&g, a),
        Command::Evaluate(a) => commands::evaluate(&g, a),
        Command::Manifest(ManifestCommand::Generate(a)) => commands::generate(&g, a),
        Command::Manifest(ManifestCommand::Validate { manifest }) => commands::validate(&manifest),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_DATA)
            }
        }
    }
}

/// Caps rayon's pool from FLICKERFORGE_THREADS. Outputs do not depend on it.
fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("FLICKERFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| anyhow::anyhow!("FLICKERFORGE_THREADS must be a positive integer, got {value:?}"))?;
    if n == 0 {
        anyhow::bail!("FLICKERFORGE_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}
