use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Speaker change detection with neural speaker-likelihood features.
#[derive(Debug, Parser)]
#[command(name = "scd", version)]
pub struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-file stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the default configuration.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generate a synthetic speaker corpus.
    SynthCorpus(SynthCorpusArgs),
    /// Write a manifest for a TIMIT-style tree (SI/SX train, SA shared).
    ImportTimit {
        #[arg(long)]
        root: PathBuf,
        /// Keep female speakers too.
        #[arg(long)]
        all_speakers: bool,
    },
    /// Dump 390-dim features and VAD masks for every utterance.
    Preprocess(PreprocessArgs),
    /// Train the speaker classifier.
    Train(TrainArgs),
    /// Frame, file and prefix-length accuracy of a model.
    Evaluate(EvaluateArgs),
    /// Train and evaluate a grid of hidden-layer shapes.
    Sweep(SweepArgs),
    /// Build a conversation and its change-point sidecar.
    Synth(SynthArgs),
    /// Fit the Bayes threshold on conversations with known change points.
    Calibrate(CalibrateArgs),
    /// Flag speaker changes in one conversation.
    Detect(DetectArgs),
    /// Score a flags file against ground truth.
    Score(ScoreArgs),
    /// Calibrate and score at every configured interval, with and without the second difference.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub speakers: usize,
    #[arg(long, default_value_t = 6)]
    pub utts: usize,
    #[arg(long, default_value_t = 4.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Speaker ID prefix.
    #[arg(long, default_value = "spk")]
    pub prefix: String,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Clone, Default)]
pub struct NetworkArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Conjugate-gradient iterations per lambda stage.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Train from `preprocess` output instead of audio.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Per-stage training log as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Shared,
    Train,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Shared)]
    pub split: Split,
    /// Row label in the table.
    #[arg(long, default_value = "test")]
    pub name: String,
    /// Per-file results as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Node counts per hidden layer.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400")]
    pub nodes: Vec<usize>,
    /// Numbers of hidden layers.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub layers: Vec<usize>,
    /// Share of training files used per speaker (at least one file).
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Speaker IDs in order, comma separated; all speakers in shuffled order when omitted.
    #[arg(long, value_delimiter = ',')]
    pub speakers: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output WAV; change points go to `<stem>.changes.txt` beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ScdArgs {
    /// Interval length in seconds.
    #[arg(long)]
    pub interval: Option<f64>,
    /// Distance norm: a number >= 1 or "inf".
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub second_difference: bool,
    /// Boundaries of slack when scoring.
    #[arg(long)]
    pub tolerance: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Conversation WAVs, each with a change-point sidecar.
    #[arg(long, num_args = 1.., required = true)]
    pub conversations: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub scd: ScdArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<PathBuf>,
    #[arg(long)]
    pub conversation: PathBuf,
    /// Flags CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub flags: PathBuf,
    /// Change-point file (one time in seconds per line).
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub tolerance: Option<usize>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub calibration: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub test: Vec<PathBuf>,
    /// Interval lengths; defaults to the configured report intervals.
    #[arg(long, value_delimiter = ',')]
    pub intervals: Option<Vec<f64>>,
    #[arg(long)]
    pub tolerance: Option<usize>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}
