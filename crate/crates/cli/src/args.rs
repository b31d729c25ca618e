//! Command-line surface. Every flag is long-form; training flags are the
//! kebab-case spelling of the config-file keys.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const FORMATS: &str = "\
FILE FORMATS
  parallel corpus (TSV)   line    := source TAB target [TAB origin]
                          source  := token (SPACE token)*
                          origin  := original | swapped | synthetic_bt | distilled | diversified
  plain text              line    := token (SPACE token)*            one sentence per line
  alignment dictionary    line    := source_token TAB target_token
  gold alignments         line    := link (SPACE link)*              one sentence pair per line
                          link    := i '-' j  (sure) | i '?' j  (possible), 1-based source i, target j
  BPE codes               file    := 'bitrain-bpe v1' NEWLINE (left SPACE right NEWLINE)*
  vocabulary              line    := token TAB id                    ids dense from 0; 0..4 reserved
  training config (TOML)  file    := 'version = 1' (key '=' value)*  keys = training flag names in snake_case
  checkpoint              'BITCKPT1' u64 meta_len, key=value lines, u32 n_tensors,
                          (u32 name_len, name, u32 ndim, u64 dims, u8 dtype, f32 LE data)*, sha256
  metrics log             one JSON object per line: step, phase, lr, train_loss, valid_loss_fwd,
                          valid_loss_swapped, valid_nll_fwd, valid_nll_swapped, train_tokens, origins
  run directory           corpora/ bpe/ checkpoints/ logs/ report.json manifest.json

EXIT CODES
  0 success, 1 usage error, 2 data error, 3 numeric failure";

#[derive(Debug, Parser)]
#[command(name = "bitrain", version, about = "Bidirectional-training workbench for neural machine translation")]
#[command(after_long_help = FORMATS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive a corpus: bidirectional doubling, swapping, code-switching,
    /// BT/KD/DD assembly, splitting or shuffling.
    BuildCorpus(BuildCorpusArgs),
    /// Learn BPE merge rules over both sides of one or more corpora.
    LearnBpe(LearnBpeArgs),
    /// Segment a corpus or plain text with learned BPE codes.
    ApplyBpe(ApplyBpeArgs),
    /// Build a shared (or per-side) vocabulary from a segmented corpus.
    BuildVocab(BuildVocabArgs),
    /// Train on one corpus, from scratch or from a checkpoint.
    Train(TrainArgs),
    /// Beam-decode plain-text sources with a checkpoint.
    Translate(TranslateArgs),
    /// Corpus-level tokenized BLEU.
    ScoreBleu(ScoreBleuArgs),
    /// Paired sign test between two systems on sentence BLEU.
    SignTest(SignTestArgs),
    /// Alignment error rate of attention-derived alignments.
    AlignEval(AlignEvalArgs),
    /// Generate a synthetic translation task with gold alignments.
    Synth(SynthArgs),
    /// Bidirectional pretraining, finetuning and evaluation in one run.
    PipelineBit(PipelineArgs),
    /// BiT combined with tagged back-translation.
    PipelineBt(PipelineMonoArgs),
    /// BiT combined with sequence-level knowledge distillation.
    PipelineKd(PipelineArgs),
    /// BiT combined with data diversification (KD and BT).
    PipelineDd(PipelineMonoArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildCorpus(_) => "build-corpus",
            Command::LearnBpe(_) => "learn-bpe",
            Command::ApplyBpe(_) => "apply-bpe",
            Command::BuildVocab(_) => "build-vocab",
            Command::Train(_) => "train",
            Command::Translate(_) => "translate",
            Command::ScoreBleu(_) => "score-bleu",
            Command::SignTest(_) => "sign-test",
            Command::AlignEval(_) => "align-eval",
            Command::Synth(_) => "synth",
            Command::PipelineBit(_) => "pipeline-bit",
            Command::PipelineBt(_) => "pipeline-bt",
            Command::PipelineKd(_) => "pipeline-kd",
            Command::PipelineDd(_) => "pipeline-dd",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutDir {
    /// Run directory for every output.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Langs {
    #[arg(long, default_value = "src")]
    pub source_lang: String,
    #[arg(long, default_value = "tgt")]
    pub target_lang: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusMode {
    Bidirectional,
    Swap,
    SentenceSwitch,
    CodeSwitch,
    Bt,
    Kd,
    Dd,
    Split,
    Shuffle,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildCorpusArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long, value_enum)]
    pub mode: CorpusMode,
    /// Parallel corpus (TSV).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub langs: Langs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// sentence-switch: probability of swapping each pair.
    #[arg(long)]
    pub probability: Option<f64>,
    /// code-switch: fraction of dictionary-covered source tokens replaced.
    #[arg(long)]
    pub switch_ratio: Option<f64>,
    /// code-switch: alignment dictionary.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// bt: target-side monolingual text.
    #[arg(long)]
    pub mono: Option<PathBuf>,
    /// bt: reverse translations of --mono, line-aligned.
    #[arg(long)]
    pub translations: Option<PathBuf>,
    /// bt: parallel:monolingual mix, e.g. 1:1.
    #[arg(long)]
    pub ratio: Option<String>,
    /// kd: teacher outputs for the sources of --input, line-aligned.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// dd: distilled corpus (TSV).
    #[arg(long)]
    pub kd_corpus: Option<PathBuf>,
    /// dd: back-translated corpus (TSV).
    #[arg(long)]
    pub bt_corpus: Option<PathBuf>,
    /// split: validation pairs.
    #[arg(long)]
    pub n_valid: Option<usize>,
    /// split: test pairs.
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnBpeArgs {
    #[command(flatten)]
    pub out: OutDir,
    /// Parallel corpora (TSV); both sides are used.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Extra plain-text files.
    #[arg(long)]
    pub text: Vec<PathBuf>,
    #[arg(long)]
    pub merges: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ApplyBpeArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub codes: PathBuf,
    /// Parallel corpus (TSV).
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    pub input: Option<PathBuf>,
    /// Plain text, one sentence per line.
    #[arg(long)]
    pub text: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VocabChoice {
    /// One vocabulary per side instead of a shared one.
    #[arg(long)]
    pub split_vocab: bool,
    /// Drop tokens seen fewer times.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub out: OutDir,
    /// Segmented parallel corpus (TSV).
    #[arg(long)]
    pub input: PathBuf,
    /// Extra segmented target-side text.
    #[arg(long)]
    pub text: Vec<PathBuf>,
    #[command(flatten)]
    pub vocab: VocabChoice,
}

/// Every training hyperparameter, defaulting to the config file and then
/// to the built-in values.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainingFlags {
    /// Training config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub total_steps: Option<u64>,
    /// Share of steps spent on bidirectional pretraining; 0 disables it.
    #[arg(long, alias = "fraction")]
    pub pretrain_fraction: Option<f64>,
    /// Explicit pretraining length, overriding the fraction.
    #[arg(long)]
    pub pretrain_steps: Option<u64>,
    #[arg(long)]
    pub tokens_per_batch: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub decay_steps: Option<u64>,
    #[arg(long)]
    pub lr_init: Option<f64>,
    #[arg(long)]
    pub lr_peak: Option<f64>,
    #[arg(long)]
    pub lr_floor: Option<f64>,
    /// One of 0.1, 0.2, 0.3.
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    #[arg(long)]
    pub n_average: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reset_optimizer: Option<bool>,
    #[arg(long)]
    pub strict_alternation: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Tiny,
    Small,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Small => "small",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BeamFlags {
    #[arg(long, default_value_t = 5)]
    pub beam_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub length_penalty: f64,
    #[arg(long, default_value_t = 2.0)]
    pub max_len_factor: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VocabFiles {
    /// Shared vocabulary, or the source vocabulary with --target-vocab.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Target vocabulary of a split-vocabulary model.
    #[arg(long)]
    pub target_vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutDir,
    /// Training corpus (TSV), used in the given direction.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation corpus (TSV).
    #[arg(long)]
    pub valid: PathBuf,
    /// Vocabulary; built from --train when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, requires = "vocab")]
    pub target_vocab: Option<PathBuf>,
    #[command(flatten)]
    pub vocab_choice: VocabChoice,
    /// Continue from this checkpoint (parameters, moments and step).
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    /// Stop after this many updates in total (default: total_steps).
    #[arg(long)]
    pub until_step: Option<u64>,
    #[arg(long, value_enum, default_value = "tiny")]
    pub model_preset: Preset,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub vocab: VocabFiles,
    /// BPE codes the model was trained with.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Source sentences, one per line.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub beam: BeamFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreBleuArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub hyps: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub max_n: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SignTestArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub hyps_a: PathBuf,
    #[arg(long)]
    pub hyps_b: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AlignEvalArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub vocab: VocabFiles,
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Word-level sentence pairs (TSV) matching --gold line by line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Gold alignments (Pharaoh).
    #[arg(long)]
    pub gold: PathBuf,
    /// Evaluate the reverse direction: swap the corpus sides and transpose
    /// the gold links.
    #[arg(long)]
    pub reverse: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutDir,
    #[arg(long, default_value_t = 64)]
    pub src_vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub tgt_vocab: usize,
    #[arg(long, default_value_t = 0)]
    pub lexicon_seed: u64,
    /// identity, reverse or rotate-K.
    #[arg(long, default_value = "reverse")]
    pub reordering: String,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_valid: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub out: OutDir,
    /// Word-level training corpus (TSV).
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Test corpus (TSV); translated and scored when given.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Gold alignments of --test (Pharaoh) for AER.
    #[arg(long, requires = "test")]
    pub test_align: Option<PathBuf>,
    #[command(flatten)]
    pub langs: Langs,
    /// BPE merge operations; corpora stay word-level when absent.
    #[arg(long)]
    pub merges: Option<usize>,
    #[command(flatten)]
    pub vocab_choice: VocabChoice,
    #[arg(long, value_enum, default_value = "tiny")]
    pub model_preset: Preset,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[command(flatten)]
    pub beam: BeamFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineMonoArgs {
    #[command(flatten)]
    pub base: PipelineArgs,
    /// Target-side monolingual text.
    #[arg(long)]
    pub mono: PathBuf,
    /// parallel:monolingual mix.
    #[arg(long, default_value = "1:1")]
    pub ratio: String,
}
