use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use speechground::align::{AnchorMode, TrainConfig};
use speechground::analysis::Trait;
use speechground::dataset::SplitRatios;
use speechground::nn::{Architecture, LrSchedule};

#[derive(Debug, Parser)]
#[command(name = "speechground", version, about = "Align speech/language and vision embeddings and evaluate retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate source files and write a manifest + vector container.
    Ingest(IngestArgs),
    /// Train a manifold and write the checkpoint and loss curve.
    Train(TrainArgs),
    /// Retrieval, threshold and ROC evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Sweep the distance threshold on the validation split.
    TuneThreshold(EvalArgs),
    /// ROC points and AUC on one split.
    Roc(RocArgs),
    /// Per-speaker models and trait correlations.
    UserStudy(StudyArgs),
    /// Models trained on equal-size speaker groups split by one trait.
    GroupStudy(GroupStudyArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Directory for all emitted files.
    #[arg(long, env = "SPEECHGROUND_OUTPUT_DIR", default_value = "speechground-out")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Featurizer {
    Mfcc,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Vector table: record_id, modality, class_label, object_id, speaker_id,
    /// split, vector (space-separated floats).
    #[arg(long)]
    pub vectors_tsv: Option<PathBuf>,
    /// Audio table: record_id, class_label, object_id, speaker_id, split, wav_file.
    #[arg(long, requires = "featurize")]
    pub audio_manifest: Option<PathBuf>,
    /// Directory that relative wav paths are resolved against (defaults to
    /// the audio table's directory).
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub featurize: Option<Featurizer>,
    /// Assign a fresh stratified split instead of keeping the input tags.
    #[arg(long)]
    pub assign_split: bool,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0.8)]
    pub train_ratio: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_ratio: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

impl SplitArgs {
    pub fn ratios(&self) -> speechground::Result<SplitRatios> {
        SplitRatios::new(self.train_ratio, self.val_ratio, self.test_ratio)
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Manifest written by `ingest`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Vector container written by `ingest`.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Frame-sequence index (needed by the LSTM language encoder).
    #[arg(long, requires = "sequence_data")]
    pub sequences: Option<PathBuf>,
    #[arg(long, requires = "sequences")]
    pub sequence_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnchorArg {
    Class,
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Mlp,
    Lstm,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 0.4)]
    pub margin: f64,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Learning rate is divided by `lr_divisor` every this many epochs.
    #[arg(long, default_value_t = 100)]
    pub lr_decay_every: usize,
    #[arg(long, default_value_t = 10.0)]
    pub lr_divisor: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Defaults to the number of training language records.
    #[arg(long)]
    pub triplets_per_epoch: Option<usize>,
    #[arg(long, value_enum, default_value_t = AnchorArg::Class)]
    pub anchor: AnchorArg,
    #[arg(long, value_enum, default_value_t = EncoderArg::Mlp)]
    pub language_encoder: EncoderArg,
    #[arg(long, default_value_t = 2048)]
    pub hidden1: usize,
    #[arg(long, default_value_t = 1536)]
    pub hidden2: usize,
    #[arg(long, default_value_t = 1024)]
    pub projection_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainingArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            epochs: self.epochs,
            schedule: LrSchedule {
                base: self.lr,
                divisor: self.lr_divisor,
                every: self.lr_decay_every,
            },
            batch_size: self.batch_size,
            triplets_per_epoch: self.triplets_per_epoch,
            anchor_mode: match self.anchor {
                AnchorArg::Class => AnchorMode::ClassUniform,
                AnchorArg::Record => AnchorMode::RecordUniform,
            },
            seed: self.seed,
            language_arch: match self.language_encoder {
                EncoderArg::Mlp => Architecture::Mlp,
                EncoderArg::Lstm => Architecture::Lstm,
            },
            hidden: [self.hidden1, self.hidden2],
            projection_dim: self.projection_dim,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Also record validation F1 at the tuned threshold after every epoch.
    #[arg(long)]
    pub f1_curve: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split table written by `train`; otherwise the manifest tags, or the
    /// split recorded in the checkpoint, are used.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    /// Candidate re-draws per retrieval metric.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub on: SplitChoice,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Speaker trait table.
    #[arg(long)]
    pub traits: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GroupStudyArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// accent, creak, hoarseness, gender, muffledness, volume or background_noise.
    #[arg(long = "trait", value_parser = parse_trait)]
    pub trait_: Trait,
}

fn parse_trait(s: &str) -> Result<Trait, String> {
    s.parse().map_err(|e: speechground::Error| e.to_string())
}
