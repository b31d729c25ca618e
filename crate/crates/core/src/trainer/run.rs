use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{make_batches, train_step, BatchStream, Phase, Schedule, TrainingConfig};
use crate::corpus::{build_bidirectional, ParallelCorpus};
use crate::error::{Error, Result};
use crate::model::checkpoint::{Checkpoint, OptimizerState};
use crate::model::{forward, label_smoothed_loss, Batch, EncodedPair, LossValue, Mode, ModelConfig, ModelParams};
use crate::rng::{derive_key, label};
use crate::special::EOS;
use crate::tokenizer::Vocabs;

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
const LAST_GOOD_CHECKPOINT: &str = "last-good.ckpt";

/// Sources get a trailing `<eos>`; targets are stored bare.
pub fn encode_corpus(corpus: &ParallelCorpus, vocabs: &Vocabs) -> Vec<EncodedPair> {
    corpus
        .pairs
        .iter()
        .map(|p| {
            let mut src = vocabs.encode_source(&p.source);
            src.push(EOS);
            EncodedPair {
                src,
                tgt: vocabs.encode_target(&p.target),
                origin: p.origin,
            }
        })
        .collect()
}

/// Parameters, optimizer moments and the number of updates done so far.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub opt: OptimizerState,
    pub step: u64,
}

impl TrainState {
    pub fn init(model: &ModelConfig) -> Result<Self> {
        let params = ModelParams::init(model)?;
        let opt = OptimizerState::new(params.num_params());
        Ok(Self { params, opt, step: 0 })
    }

    pub fn to_checkpoint(&self, vocab_fingerprint: &str, phase: Phase) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone());
        ck.optimizer = Some(self.opt.clone());
        ck.meta.insert("step".into(), self.step.to_string());
        ck.meta.insert("vocab".into(), vocab_fingerprint.to_string());
        ck.meta.insert("phase".into(), phase.as_str().into());
        ck
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let step = ck.step();
        let opt = ck
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no optimizer state".into()))?;
        Ok(Self {
            params: ck.params,
            opt,
            step,
        })
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Updates completed.
    pub step: u64,
    pub phase: Phase,
    /// Learning rate of the last update.
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss_fwd: f64,
    pub valid_loss_swapped: Option<f64>,
    pub valid_nll_fwd: f64,
    pub valid_nll_swapped: Option<f64>,
    /// Non-pad target tokens trained on since the previous record.
    pub train_tokens: u64,
    /// Training pairs seen since the previous record, by origin tag.
    pub origins: BTreeMap<String, u64>,
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunDirs {
    pub checkpoints: PathBuf,
    pub metrics: PathBuf,
    /// Throughput log; kept apart so the metrics log stays deterministic.
    pub timing: PathBuf,
}

impl RunDirs {
    /// The fixed layout under a run directory.
    pub fn under(root: &Path) -> Self {
        Self {
            checkpoints: root.join("checkpoints"),
            metrics: root.join("logs").join("metrics.jsonl"),
            timing: root.join("logs").join("timing.jsonl"),
        }
    }

    pub fn prepare(&self) -> Result<()> {
        for dir in [Some(self.checkpoints.as_path()), self.metrics.parent(), self.timing.parent()]
            .into_iter()
            .flatten()
        {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(())
    }

    /// Empties the logs and removes old checkpoints for a fresh run.
    pub fn reset(&self) -> Result<()> {
        self.prepare()?;
        for f in [&self.metrics, &self.timing] {
            fs::write(f, b"").map_err(|e| Error::io(f, e))?;
        }
        for (_, path) in list_step_checkpoints(&self.checkpoints)? {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:08}.ckpt"))
}

fn list_step_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(step) = name
            .strip_prefix("step-")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse().ok())
        {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

/// The last `n` periodic checkpoints at or before `up_to`, oldest first.
pub fn latest_checkpoints(dir: &Path, n: usize, up_to: u64) -> Result<Vec<PathBuf>> {
    let all: Vec<PathBuf> = list_step_checkpoints(dir)?
        .into_iter()
        .filter(|(s, _)| *s <= up_to)
        .map(|(_, p)| p)
        .collect();
    Ok(all[all.len().saturating_sub(n)..].to_vec())
}

/// Element-wise mean of checkpoints sharing one model config and
/// vocabulary.
pub fn average_checkpoints(paths: &[PathBuf]) -> Result<ModelParams<f32>> {
    let first_path = paths
        .first()
        .ok_or_else(|| Error::invalid("no checkpoints to average"))?;
    let first = Checkpoint::load(first_path)?;
    let vocab = first.meta.get("vocab").cloned();
    let mut sum: Vec<f64> = first.params.data.iter().map(|&v| v as f64).collect();
    for path in &paths[1..] {
        let ck = Checkpoint::load(path)?;
        if ck.params.config != first.params.config {
            return Err(Error::invalid(format!(
                "{} has a different model config than {}",
                path.display(),
                first_path.display()
            )));
        }
        if ck.meta.get("vocab") != vocab.as_ref() {
            return Err(Error::invalid(format!(
                "{} was trained with a different vocabulary than {}",
                path.display(),
                first_path.display()
            )));
        }
        for (s, &v) in sum.iter_mut().zip(&ck.params.data) {
            *s += v as f64;
        }
    }
    let n = paths.len() as f64;
    let mut out = first.params;
    for (o, s) in out.data.iter_mut().zip(sum) {
        *o = (s / n) as f32;
    }
    Ok(out)
}

/// Mean label-smoothed and plain NLL over a corpus, dropout off.
pub fn validation_loss(
    params: &ModelParams<f32>,
    pairs: &[EncodedPair],
    tokens_per_batch: usize,
    epsilon: f64,
) -> Result<LossValue> {
    let mut total = LossValue::default();
    for idx in make_batches(pairs, tokens_per_batch, 0, 0)? {
        let batch = Batch::from_pairs(idx.iter().map(|&i| &pairs[i]));
        let out = forward(params, &batch, Mode::Eval)?;
        let l = label_smoothed_loss(&out.log_probs, out.vocab, &batch.tgt_out, &batch.tgt_mask, epsilon)?;
        total.merge(&l);
    }
    Ok(total)
}

/// Validation pairs in the trained direction and, if the vocabulary is
/// shared, swapped.
pub struct ValidSets {
    pub fwd: Vec<EncodedPair>,
    pub swapped: Option<Vec<EncodedPair>>,
}

impl ValidSets {
    pub fn new(valid: &ParallelCorpus, vocabs: &Vocabs) -> Self {
        let fwd = encode_corpus(valid, vocabs);
        let swapped = vocabs
            .is_shared()
            .then(|| fwd.iter().map(EncodedPair::swapped).collect());
        Self { fwd, swapped }
    }
}

/// Trains `state` from its current step up to `end_step` on a fresh batch
/// stream over `pairs`, logging every `checkpoint_interval` updates and
/// keeping the newest `n_average` periodic checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn train_segment(
    state: &mut TrainState,
    pairs: &[EncodedPair],
    end_step: u64,
    valid: &ValidSets,
    cfg: &TrainingConfig,
    schedule: &Schedule,
    dirs: &RunDirs,
    vocab_fingerprint: &str,
) -> Result<Vec<MetricsRecord>> {
    dirs.prepare()?;
    if end_step > schedule.total_steps {
        return Err(Error::invalid(format!(
            "segment end {end_step} beyond total_steps {}",
            schedule.total_steps
        )));
    }
    if state.step >= end_step {
        return Ok(Vec::new());
    }
    let start_phase = schedule.phase(state.step);
    if cfg.reset_optimizer && start_phase == Phase::Finetune && state.step == schedule.pretrain_steps && state.step > 0 {
        state.opt = OptimizerState::new(state.params.num_params());
    }
    let stream_seed = derive_key(cfg.seed, &[label("batches"), label(start_phase.as_str()), state.step]);
    let alternate = cfg.strict_alternation && start_phase == Phase::Pretrain;
    let mut stream = BatchStream::new(pairs, cfg.tokens_per_batch, stream_seed, alternate)?;

    let mut records = Vec::new();
    let mut interval = LossValue::default();
    let mut origins: BTreeMap<String, u64> = BTreeMap::new();
    let mut clock = Instant::now();
    let mut interval_padded = 0u64;
    while state.step < end_step {
        let idx = stream.next_batch()?;
        let batch = Batch::from_pairs(idx.iter().map(|&i| &pairs[i]));
        for &i in &idx {
            *origins.entry(pairs[i].origin.to_string()).or_default() += 1;
        }
        let phase = schedule.phase(state.step);
        let lr = schedule.lr_at(state.step)?;
        let loss = match train_step(state, &batch, cfg, schedule) {
            Ok(l) => l,
            Err(e) if e.is_numeric() => {
                let path = dirs.checkpoints.join(LAST_GOOD_CHECKPOINT);
                state.to_checkpoint(vocab_fingerprint, phase).save(&path)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        interval.merge(&loss);
        interval_padded += batch.padded_tokens() as u64;

        let done = state.step;
        if done.is_multiple_of(cfg.checkpoint_interval) || done == end_step {
            let fwd = validation_loss(&state.params, &valid.fwd, cfg.tokens_per_batch, cfg.label_smoothing)?;
            let swapped = valid
                .swapped
                .as_ref()
                .map(|s| validation_loss(&state.params, s, cfg.tokens_per_batch, cfg.label_smoothing))
                .transpose()?;
            let rec = MetricsRecord {
                step: done,
                phase,
                lr,
                train_loss: interval.mean(),
                valid_loss_fwd: fwd.mean(),
                valid_loss_swapped: swapped.map(|l| l.mean()),
                valid_nll_fwd: fwd.nll_mean(),
                valid_nll_swapped: swapped.map(|l| l.nll_mean()),
                train_tokens: interval.tokens as u64,
                origins: std::mem::take(&mut origins),
            };
            append_line(&dirs.metrics, &serde_json::to_string(&rec).expect("record serializes"))?;
            let secs = clock.elapsed().as_secs_f64();
            let timing = serde_json::json!({
                "step": done,
                "seconds": secs,
                "tokens_per_sec": interval.tokens as f64 / secs.max(1e-9),
                "padded_tokens_per_sec": interval_padded as f64 / secs.max(1e-9),
            });
            append_line(&dirs.timing, &timing.to_string())?;
            records.push(rec);
            interval = LossValue::default();
            interval_padded = 0;

            state
                .to_checkpoint(vocab_fingerprint, phase)
                .save(&checkpoint_path(&dirs.checkpoints, done))?;
            let all = list_step_checkpoints(&dirs.checkpoints)?;
            for (_, old) in &all[..all.len().saturating_sub(cfg.n_average)] {
                fs::remove_file(old).map_err(|e| Error::io(old, e))?;
            }
            clock = Instant::now();
        }
    }
    Ok(records)
}

pub struct PipelineOutput {
    /// Mean of the last `n_average` checkpoints.
    pub params: ModelParams<f32>,
    pub metrics: Vec<MetricsRecord>,
    /// State at the phase boundary, when this run had a bidirectional
    /// phase.
    pub pretrain_checkpoint: Option<PathBuf>,
    pub final_checkpoint: PathBuf,
}

/// Averages the newest checkpoints of a finished run into `final.ckpt`.
pub fn finish_run(dirs: &RunDirs, n_average: usize, up_to: u64, vocab_fingerprint: &str) -> Result<(ModelParams<f32>, PathBuf)> {
    let paths = latest_checkpoints(&dirs.checkpoints, n_average, up_to)?;
    let params = average_checkpoints(&paths)?;
    let mut ck = Checkpoint::new(params.clone());
    ck.meta.insert("step".into(), up_to.to_string());
    ck.meta.insert("vocab".into(), vocab_fingerprint.to_string());
    ck.meta.insert("averaged".into(), paths.len().to_string());
    let path = dirs.checkpoints.join(FINAL_CHECKPOINT);
    ck.save(&path)?;
    Ok((params, path))
}

/// Model config a run trains: `base` sized to the vocabulary, with the
/// run's dropout and seed.
pub fn run_model_config(base: &ModelConfig, vocabs: &Vocabs, cfg: &TrainingConfig) -> ModelConfig {
    let mut model = base.clone();
    model.vocab_size = vocabs.model_size();
    model.dropout_rate = cfg.dropout_rate;
    model.init_seed = cfg.seed;
    model
}

/// Phase 1: fresh parameters trained on `build_bidirectional(train)` up to
/// `pretrain_steps`, saved as `pretrain.ckpt`. With zero pretraining steps
/// the fresh state is returned untouched.
pub fn pretrain_phase(
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    vocabs: &Vocabs,
    cfg: &TrainingConfig,
    model: &ModelConfig,
    dirs: &RunDirs,
) -> Result<(TrainState, Vec<MetricsRecord>)> {
    let schedule = Schedule::new(cfg)?;
    dirs.reset()?;
    let mut state = TrainState::init(&run_model_config(model, vocabs, cfg))?;
    if schedule.pretrain_steps == 0 {
        return Ok((state, Vec::new()));
    }
    if !vocabs.is_shared() {
        return Err(Error::invalid("bidirectional pretraining needs a shared vocabulary"));
    }
    let fingerprint = vocabs.fingerprint();
    let doubled = encode_corpus(&build_bidirectional(train)?, vocabs);
    let metrics = train_segment(
        &mut state,
        &doubled,
        schedule.pretrain_steps,
        &ValidSets::new(valid, vocabs),
        cfg,
        &schedule,
        dirs,
        &fingerprint,
    )?;
    state
        .to_checkpoint(&fingerprint, Phase::Pretrain)
        .save(&dirs.checkpoints.join(PRETRAIN_CHECKPOINT))?;
    Ok((state, metrics))
}

/// Phase 2: continues `state` on `train` in its given direction up to
/// `total_steps` and averages the newest checkpoints into `final.ckpt`.
pub fn finetune_phase(
    mut state: TrainState,
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    vocabs: &Vocabs,
    cfg: &TrainingConfig,
    dirs: &RunDirs,
) -> Result<PipelineOutput> {
    let schedule = Schedule::new(cfg)?;
    if state.step != schedule.pretrain_steps {
        return Err(Error::invalid(format!(
            "finetuning starts at step {}, state is at step {}",
            schedule.pretrain_steps, state.step
        )));
    }
    if state.params.config.vocab_size != vocabs.model_size() {
        return Err(Error::invalid("parameters and vocabulary disagree on the number of ids"));
    }
    let fingerprint = vocabs.fingerprint();
    let metrics = train_segment(
        &mut state,
        &encode_corpus(train, vocabs),
        schedule.total_steps,
        &ValidSets::new(valid, vocabs),
        cfg,
        &schedule,
        dirs,
        &fingerprint,
    )?;
    let (params, final_checkpoint) = finish_run(dirs, cfg.n_average, schedule.total_steps, &fingerprint)?;
    Ok(PipelineOutput {
        params,
        metrics,
        pretrain_checkpoint: None,
        final_checkpoint,
    })
}

/// Bidirectional pretraining on `build_bidirectional(train)` for
/// `pretrain_steps`, then finetuning on `train` itself; returns the
/// averaged final parameters. With zero pretraining steps this is plain
/// baseline training.
pub fn run_bit_pipeline(
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    vocabs: &Vocabs,
    cfg: &TrainingConfig,
    model: &ModelConfig,
    dirs: &RunDirs,
) -> Result<PipelineOutput> {
    let (state, mut metrics) = pretrain_phase(train, valid, vocabs, cfg, model, dirs)?;
    let pretrained = state.step > 0;
    let mut out = finetune_phase(state, train, valid, vocabs, cfg, dirs)?;
    metrics.append(&mut out.metrics);
    out.metrics = metrics;
    out.pretrain_checkpoint = pretrained.then(|| dirs.checkpoints.join(PRETRAIN_CHECKPOINT));
    Ok(out)
}
