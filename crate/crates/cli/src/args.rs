use std::path::PathBuf;

use armpose::eval::SplitStrategy;
use armpose::nn::{Arch, TargetCodec};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "armpose", version, about = "Arm pose estimation from a single smartwatch")]
pub struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with default flag values, overridden by the command line.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an emulated session: sensor.csv, truth.csv and paired.csv.
    Synth(SynthArgs),
    /// Run the two-step calibration over a recorded sensor stream.
    Calibrate(CalibrateArgs),
    /// Train a model on paired recordings.
    Train(TrainArgs),
    /// Position errors of a model on paired recordings.
    Eval(EvalArgs),
    /// Cross-validate the architecture x codec matrix.
    Bench(BenchArgs),
    /// Stream an emulated session over UDP, or record it to a capture file.
    Emulate(EmulateArgs),
    /// Receive a sensor stream and emit pose distributions as JSON lines.
    Serve(ServeArgs),
    /// Monte-Carlo pose distributions for every frame of a recording.
    Infer(InferArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Calibrate(_) => "calibrate",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
            Command::Emulate(_) => "emulate",
            Command::Serve(_) => "serve",
            Command::Infer(_) => "infer",
        }
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(v) => Err(format!("{v} is not a positive number")),
        Err(e) => Err(e.to_string()),
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
        Ok(v) => Err(format!("{v} is outside [0, 1)")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse()
}

fn parse_codec(s: &str) -> Result<TargetCodec, String> {
    s.parse()
}

/// `arch:codec`, e.g. `rnn:sixd`.
fn parse_cell(s: &str) -> Result<(Arch, TargetCodec), String> {
    let (a, c) = s.split_once(':').ok_or_else(|| format!("expected ARCH:CODEC, got {s}"))?;
    Ok((parse_arch(a)?, parse_codec(c)?))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seconds per session, including the 6 s calibration prelude.
    #[arg(long, default_value_t = 60.0, value_parser = positive_f64)]
    pub duration: f64,
    /// Number of sessions; more than one writes `session_NN/` subdirectories.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub sessions: u32,
    /// Upper-arm length in meters (random per session when absent).
    #[arg(long, value_parser = positive_f64)]
    pub upper_arm: Option<f64>,
    /// Lower-arm length in meters (random per session when absent).
    #[arg(long, value_parser = positive_f64)]
    pub lower_arm: Option<f64>,
    /// Disable sensor noise.
    #[arg(long)]
    pub no_noise: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// sensor.csv (or paired.csv) of one session.
    #[arg(long)]
    pub sensor: PathBuf,
    /// Also write the calibration JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Architecture: ff or rnn.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Arch,
    /// Target codec: polar, xyz, sixd or quat.
    #[arg(long, value_parser = parse_codec)]
    pub codec: TargetCodec,
    /// paired.csv files, or directories containing them (repeatable).
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum training epochs.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.001, value_parser = positive_f64)]
    pub lr: f64,
    /// Mini-batch size.
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 10)]
    pub patience: u64,
    /// Hidden units per layer.
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: u64,
    /// Hidden layers (default 5 for ff, 4 for rnn).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub depth: Option<u64>,
    /// Dropout probability, also used for Monte-Carlo inference.
    #[arg(long, default_value_t = 0.2, value_parser = fraction)]
    pub dropout: f64,
    /// Tail of the data held out for early stopping.
    #[arg(long, default_value_t = 0.1, value_parser = fraction)]
    pub val_fraction: f64,
    /// Write per-epoch losses as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    /// paired.csv files, or directories containing them (repeatable).
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Also write the JSON summary here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchProfile {
    /// Network and training sizes of the reference setup.
    Full,
    /// Smaller networks and a short schedule for a single CPU core.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    TimeBlocks,
    BySession,
}

impl From<SplitArg> for SplitStrategy {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::TimeBlocks => SplitStrategy::TimeBlocks,
            SplitArg::BySession => SplitStrategy::BySession,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Output directory for results.csv, summary.json and hist/.
    #[arg(long)]
    pub out: PathBuf,
    /// paired.csv files or directories; a synthetic dataset is used when absent.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Sessions of the synthetic dataset.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub sessions: u32,
    /// Seconds per synthetic session (8 x 56 s gives about 20k samples).
    #[arg(long, default_value_t = 56.0, value_parser = positive_f64)]
    pub session_duration: f64,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: u64,
    /// How folds are formed.
    #[arg(long, value_enum, default_value_t = SplitArg::TimeBlocks)]
    pub split: SplitArg,
    /// Cells to run as ARCH:CODEC (repeatable); all eight when absent.
    #[arg(long, value_parser = parse_cell, num_args = 1..)]
    pub cells: Vec<(Arch, TargetCodec)>,
    /// Network and schedule sizes.
    #[arg(long, value_enum, default_value_t = BenchProfile::Full)]
    pub profile: BenchProfile,
    /// Override the profile's hidden width.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: Option<u64>,
    /// Override the profile's feedforward depth.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub ff_depth: Option<u64>,
    /// Override the profile's recurrent depth.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub rnn_depth: Option<u64>,
    /// Override the profile's maximum epochs.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    /// Override the profile's early-stopping patience.
    #[arg(long)]
    pub patience: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmulateArgs {
    /// Destination host:port.
    #[arg(long, required_unless_present = "capture")]
    pub target: Option<String>,
    /// Also write the datagrams to this capture file (sends only with --target).
    #[arg(long)]
    pub capture: Option<PathBuf>,
    /// Session length in seconds, including the 6 s calibration prelude.
    #[arg(long, default_value_t = 60.0, value_parser = positive_f64)]
    pub duration: f64,
    /// Playback speed multiplier.
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    pub speed: f64,
    /// Upper-arm length in meters.
    #[arg(long, default_value_t = 0.30, value_parser = positive_f64)]
    pub upper_arm: f64,
    /// Lower-arm length in meters.
    #[arg(long, default_value_t = 0.26, value_parser = positive_f64)]
    pub lower_arm: f64,
    /// Write the session report JSON here as well as to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Monte-Carlo passes per frame.
    #[arg(long, default_value_t = 150, value_parser = clap::value_parser!(u64).range(2..))]
    pub passes: u64,
    /// UDP address to listen on.
    #[arg(long, default_value = "0.0.0.0:9870")]
    pub bind: String,
    /// Process a capture file offline instead of listening.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Pose output file; `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Stop after this many seconds.
    #[arg(long, value_parser = positive_f64)]
    pub duration: Option<f64>,
    /// Stop after this many seconds without packets.
    #[arg(long, value_parser = positive_f64)]
    pub idle_timeout: Option<f64>,
    /// Stop after this many datagrams.
    #[arg(long)]
    pub max_packets: Option<u64>,
    /// Refuse to start unless the model predicts this codec.
    #[arg(long, value_parser = parse_codec)]
    pub codec: Option<TargetCodec>,
    /// Include every Monte-Carlo sample in the output.
    #[arg(long)]
    pub with_samples: bool,
    /// Wearer's upper-arm length in meters.
    #[arg(long, default_value_t = 0.30, value_parser = positive_f64)]
    pub upper_arm: f64,
    /// Wearer's lower-arm length in meters.
    #[arg(long, default_value_t = 0.26, value_parser = positive_f64)]
    pub lower_arm: f64,
    /// Two modes need WCSS(1)/WCSS(2) at least this large.
    #[arg(long, default_value_t = 4.0, value_parser = positive_f64)]
    pub wcss_ratio: f64,
    /// Two modes need centroids at least this far apart, meters.
    #[arg(long, default_value_t = 0.10, value_parser = positive_f64)]
    pub min_separation: f64,
    /// Seconds between metrics log lines.
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    pub metrics_interval: f64,
    /// Write the final metrics report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    /// paired.csv (or its directory) of one session.
    #[arg(long)]
    pub data: PathBuf,
    /// Monte-Carlo passes per frame.
    #[arg(long, default_value_t = 150, value_parser = clap::value_parser!(u64).range(2..))]
    pub passes: u64,
    /// Output file; `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
    /// Only the first N frames.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Include every Monte-Carlo sample in the output.
    #[arg(long)]
    pub with_samples: bool,
}
