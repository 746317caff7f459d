use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hvlad::model::Variant;

#[derive(Debug, Parser)]
#[command(name = "hvlad", version, about = "Source speaker recognition from converted voices")]
pub struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Plain `key=value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the seeded source/target pairing manifest with its train/test split.
    Pair(PairArgs),
    /// Run an external converter on every manifest record.
    Convert(ConvertArgs),
    /// Cache full-utterance spectrograms of the converted audio.
    Extract(ExtractArgs),
    /// Train an encoder on the train split.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print (or write) a JSON report.
    Eval(EvalArgs),
    /// Aggregate evaluation reports into a table and accuracy plot.
    Report(ReportArgs),
    /// Write a synthetic multi-speaker corpus.
    SynthCorpus(SynthCorpusArgs),
    /// Built-in converter for synthetic experiments.
    SynthConvert(SynthConvertArgs),
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target utterances given to the converter per record (1-3).
    #[arg(long)]
    pub n_targets: Option<usize>,
    #[arg(long)]
    pub per_speaker: Option<usize>,
    /// Records in the test split (default: one sixth).
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Speaker directories to skip, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Command template with `{source}`, `{targets}` and `{out}` placeholders.
    #[arg(long)]
    pub converter: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Updated manifest path (default: rewrite `--manifest`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub fft_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory for the config echo, log and checkpoints.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub steps: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub crop_s: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the newest checkpoint in `--out-dir`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint to evaluate (default: newest in the run directory).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub n_crops: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON reports produced by `eval`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Allow several configurations, one table row and curve each.
    #[arg(long)]
    pub group: bool,
    /// Write the markdown table here instead of stdout.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Write an SVG plot of the smoothed training accuracy curves.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub speakers: usize,
    #[arg(long, default_value_t = 20)]
    pub utterances: usize,
    #[arg(long, default_value_t = 3.0)]
    pub duration_s: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthConvertArgs {
    #[arg(long, value_enum, default_value = "warp")]
    pub mode: ConvertMode,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Gain of the frequency-warped source in the warp mixture.
    #[arg(long)]
    pub source_gain: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    pub targets: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Baseline1,
    Baseline2,
    Baseline3,
    Hvlad,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Baseline1 => Variant::Baseline1,
            VariantArg::Baseline2 => Variant::Baseline2,
            VariantArg::Baseline3 => Variant::Baseline3,
            VariantArg::Hvlad => Variant::Hvlad,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConvertMode {
    /// Copy the source unchanged.
    Identity,
    /// Target audio plus a weak frequency-warped copy of the source.
    Warp,
}
