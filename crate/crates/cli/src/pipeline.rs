//! End-to-end recipes: data preparation, training, translation and
//! scoring wired together. The subcommands are thin wrappers around these.

use std::collections::BTreeSet;

use anyhow::{bail, Context, Result};
use bitrain_core::corpus::{
    assemble_dd, assemble_kd, assemble_tagged_bt, bt_selection, build_bidirectional, write_sentences, write_tsv,
    MixRatio, MonoCorpus, ParallelCorpus, Tokens,
};
use bitrain_core::decode::{teacher_forced_attention, translate, BeamConfig};
use bitrain_core::eval::{
    attention_to_alignment, corpus_aer, corpus_bleu, project_to_words, strip_attention, word_index, AlignmentSet,
    EvalReport, Link,
};
use bitrain_core::model::{extract_alignment_attention, ModelConfig, ModelParams};
use bitrain_core::special::{is_reserved, EOS};
use bitrain_core::tokenizer::{decode_bpe, learn_bpe, BpeModel, Segmenter, Vocabs, Vocabulary};
use bitrain_core::trainer::{
    finetune_phase, pretrain_phase, run_model_config, MetricsRecord, PipelineOutput, RunDirs, TrainState, TrainingConfig, FINAL_CHECKPOINT, PRETRAIN_CHECKPOINT,
};
use serde::Serialize;

use crate::rundir::{RunDir, RunManifest};

/// Optional BPE segmentation. Without a model, corpora are used at the
/// word level as given.
#[derive(Debug, Clone, Default)]
pub struct Segmentation(pub Option<BpeModel>);

impl Segmentation {
    pub fn learn(merges: Option<usize>, corpora: &[&[Tokens]]) -> Result<Self> {
        Ok(Self(match merges {
            Some(n) => Some(learn_bpe(corpora, n)?),
            None => None,
        }))
    }

    pub fn sentences(&self, sentences: &[Tokens]) -> Vec<Tokens> {
        match &self.0 {
            Some(m) => {
                let mut seg = Segmenter::new(m);
                sentences.iter().map(|s| seg.apply(s)).collect()
            }
            None => sentences.to_vec(),
        }
    }

    pub fn corpus(&self, corpus: &ParallelCorpus) -> Result<ParallelCorpus> {
        Ok(match &self.0 {
            Some(m) => bitrain_core::tokenizer::segment_corpus(m, corpus)?,
            None => corpus.clone(),
        })
    }

    /// Back to words, dropping control tokens other than `<unk>`.
    pub fn words(&self, tokens: &[String]) -> Tokens {
        match &self.0 {
            Some(_) => decode_bpe(tokens, false),
            None => tokens
                .iter()
                .filter(|t| !is_reserved(t) || t.as_str() == bitrain_core::special::UNK_TOKEN)
                .cloned()
                .collect(),
        }
    }
}

/// Vocabulary over segmented training text and any segmented monolingual
/// text (which joins the target side).
pub fn vocab_for(train: &ParallelCorpus, mono: &[Tokens], shared: bool, min_count: usize) -> Result<Vocabs> {
    Ok(if shared {
        let sides = train.pairs.iter().flat_map(|p| [&p.source, &p.target]).chain(mono);
        Vocabs::Shared(Vocabulary::from_counts(sides, min_count, true)?)
    } else {
        Vocabs::Split {
            source: Vocabulary::from_counts(train.pairs.iter().map(|p| &p.source), min_count, false)?,
            target: Vocabulary::from_counts(train.pairs.iter().map(|p| &p.target).chain(mono), min_count, false)?,
        }
    })
}

/// Word-level translations of word-level sources.
pub fn translate_words(
    params: &ModelParams<f32>,
    vocabs: &Vocabs,
    seg: &Segmentation,
    sources: &[Tokens],
    beam: &BeamConfig,
) -> Result<Vec<Tokens>> {
    seg.sentences(sources)
        .iter()
        .map(|s| Ok(seg.words(&translate(params, vocabs, s, beam)?.tokens)))
        .collect()
}

pub fn bleu_report(hyps: &[Tokens], refs: &[Tokens]) -> Result<EvalReport> {
    Ok(EvalReport::from_bleu(&corpus_bleu(hyps, refs, 4)?))
}

/// Word alignments read off the penultimate decoder layer while the model
/// is forced along the reference target.
pub fn predict_alignments(
    params: &ModelParams<f32>,
    vocabs: &Vocabs,
    seg: &Segmentation,
    corpus: &ParallelCorpus,
) -> Result<Vec<BTreeSet<Link>>> {
    let segmented = seg.corpus(corpus)?;
    segmented
        .pairs
        .iter()
        .map(|p| {
            let mut src = vocabs.encode_source(&p.source);
            src.push(EOS);
            let tgt = vocabs.encode_target(&p.target);
            let record = teacher_forced_attention(params, &src, &tgt)?;
            let matrix = extract_alignment_attention(&record)?;
            let src_keep: Vec<bool> = p.source.iter().map(|t| !is_reserved(t)).chain([false]).collect();
            let tgt_keep: Vec<bool> = p.target.iter().map(|t| !is_reserved(t)).chain([false]).collect();
            let kept = strip_attention(&matrix, &src_keep, &tgt_keep)?;
            let src_tokens: Vec<&String> = p.source.iter().filter(|t| !is_reserved(t)).collect();
            let tgt_tokens: Vec<&String> = p.target.iter().filter(|t| !is_reserved(t)).collect();
            let links = attention_to_alignment(&kept, src_tokens.len(), tgt_tokens.len())?;
            Ok(project_to_words(&links, &word_index(&src_tokens), &word_index(&tgt_tokens)))
        })
        .collect()
}

/// Options shared by every training recipe.
#[derive(Debug, Clone, Serialize)]
pub struct RecipeOptions {
    pub training: TrainingConfig,
    pub model: ModelConfig,
    pub beam: BeamConfig,
    /// BPE merges; `None` keeps corpora at the word level.
    pub merges: Option<usize>,
    pub shared_vocab: bool,
    pub min_count: usize,
}

/// Raw word-level inputs of a recipe.
#[derive(Debug, Clone)]
pub struct RecipeData {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: Option<ParallelCorpus>,
    /// Gold word alignments for `test`.
    pub test_alignments: Option<Vec<AlignmentSet>>,
    /// Target-side monolingual text for back-translation.
    pub mono: Option<MonoCorpus>,
}

/// What a recipe produced.
#[derive(Debug, Clone, Serialize)]
pub struct RecipeReport {
    pub recipe: String,
    pub training_pairs: usize,
    pub pretrain_steps: u64,
    pub total_steps: u64,
    pub final_valid_loss: Option<f64>,
    pub final_valid_loss_swapped: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<EvalReport>,
    /// Validation losses of auxiliary models (reverse model, teacher).
    pub auxiliary: Vec<(String, Option<f64>)>,
}

struct Prepared {
    seg: Segmentation,
    vocabs: Vocabs,
    train: ParallelCorpus,
    valid: ParallelCorpus,
}

fn prepare(run: &RunDir, data: &RecipeData, opts: &RecipeOptions) -> Result<Prepared> {
    let mono: Vec<Tokens> = data.mono.as_ref().map(|m| m.sentences.clone()).unwrap_or_default();
    let sources: Vec<Tokens> = data.train.pairs.iter().map(|p| p.source.clone()).collect();
    let targets: Vec<Tokens> = data.train.pairs.iter().map(|p| p.target.clone()).collect();
    let seg = Segmentation::learn(opts.merges, &[&sources, &targets, &mono])?;
    let train = seg.corpus(&data.train)?;
    let valid = seg.corpus(&data.valid)?;
    let vocabs = vocab_for(&train, &seg.sentences(&mono), opts.shared_vocab, opts.min_count)?;
    if let Some(m) = &seg.0 {
        m.save(&run.bpe("codes.txt"))?;
        write_tsv(&run.corpora("train.bpe.tsv"), &train)?;
        write_tsv(&run.corpora("valid.bpe.tsv"), &valid)?;
    }
    match &vocabs {
        Vocabs::Shared(v) => v.save(&run.bpe("vocab.tsv"))?,
        Vocabs::Split { source, target } => {
            source.save(&run.bpe("vocab.src.tsv"))?;
            target.save(&run.bpe("vocab.tgt.tsv"))?;
        }
    }
    Ok(Prepared {
        seg,
        vocabs,
        train,
        valid,
    })
}

fn last_valid(metrics: &[MetricsRecord]) -> (Option<f64>, Option<f64>) {
    metrics
        .last()
        .map_or((None, None), |m| (Some(m.valid_loss_fwd), m.valid_loss_swapped))
}

fn evaluate(run: &RunDir, prep: &Prepared, params: &ModelParams<f32>, data: &RecipeData, beam: &BeamConfig) -> Result<Option<EvalReport>> {
    let Some(test) = &data.test else { return Ok(None) };
    let sources: Vec<Tokens> = test.pairs.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<Tokens> = test.pairs.iter().map(|p| p.target.clone()).collect();
    let hyps = translate_words(params, &prep.vocabs, &prep.seg, &sources, beam)?;
    write_sentences(&run.corpora("test.hyp.txt"), &hyps)?;
    let mut report = bleu_report(&hyps, &refs)?;
    if let Some(gold) = &data.test_alignments {
        let links = predict_alignments(params, &prep.vocabs, &prep.seg, test)?;
        report.alignment = Some(corpus_aer(&links, gold)?);
    }
    Ok(Some(report))
}

/// The main model's pretraining, or a fresh state when there is none.
fn shared_pretrain(run: &RunDir, prep: &Prepared, opts: &RecipeOptions) -> Result<(TrainState, Vec<MetricsRecord>)> {
    if opts.training.pretrain_steps()? > 0 {
        write_tsv(&run.corpora("train.bidirectional.tsv"), &build_bidirectional(&prep.train)?)?;
    }
    Ok(pretrain_phase(
        &prep.train,
        &prep.valid,
        &prep.vocabs,
        &opts.training,
        &opts.model,
        &run.train_dirs(),
    )?)
}

/// An auxiliary model finetuned from the shared phase-1 state.
fn finetune_aux(
    run: &RunDir,
    name: &str,
    start: &TrainState,
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    vocabs: &Vocabs,
    cfg: &TrainingConfig,
) -> Result<PipelineOutput> {
    let dirs: RunDirs = run.aux_dirs(name);
    dirs.reset()?;
    finetune_phase(start.clone(), train, valid, vocabs, cfg, &dirs)
        .with_context(|| format!("training the {name} model"))
}

/// Which augmentation sits on top of the bidirectional pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    Bit,
    Bt(MixRatio),
    Kd,
    Dd(MixRatio),
}

/// Prepares the data, completes and writes the manifest, then runs the
/// recipe and writes `report.json`.
pub fn run_recipe(
    run: &RunDir,
    data: &RecipeData,
    opts: &RecipeOptions,
    recipe: Recipe,
    mut manifest: RunManifest,
) -> Result<RecipeReport> {
    if matches!(recipe, Recipe::Bt(_) | Recipe::Dd(_)) {
        require_mono(data)?;
    }
    let prep = prepare(run, data, opts)?;
    let model = run_model_config(&opts.model, &prep.vocabs, &opts.training);
    model.validate()?;
    manifest.training = Some(opts.training.clone());
    manifest.model = Some(model);
    manifest.seeds.insert("training".into(), opts.training.seed);
    manifest.seeds.insert("init".into(), opts.training.seed);
    manifest.planned.insert("pretrain_steps".into(), opts.training.pretrain_steps()?);
    manifest.planned.insert("parallel_pairs".into(), prep.train.len() as u64);
    let bt_pairs = |ratio: MixRatio| -> Result<u64> {
        let mono = require_mono(data)?.sentences.len();
        Ok(bt_selection(prep.train.len(), mono, ratio, opts.training.seed)?.len() as u64)
    };
    match recipe {
        Recipe::Bit | Recipe::Kd => {
            manifest.planned.insert("training_pairs".into(), prep.train.len() as u64);
        }
        Recipe::Bt(ratio) => {
            let n = bt_pairs(ratio)?;
            manifest.planned.insert("bt_pairs".into(), n);
            manifest.planned.insert("training_pairs".into(), prep.train.len() as u64 + n);
        }
        Recipe::Dd(ratio) => {
            manifest.planned.insert("bt_pairs".into(), bt_pairs(ratio)?);
        }
    }
    for (name, path) in [
        ("metrics", run.train_dirs().metrics),
        ("final_checkpoint", run.checkpoints().join(FINAL_CHECKPOINT)),
        ("report", run.root().join(crate::rundir::REPORT)),
    ] {
        manifest.artifact(name, &run.relative(&path));
    }
    if opts.training.pretrain_steps()? > 0 {
        manifest.artifact("pretrain_checkpoint", &run.relative(&run.checkpoints().join(PRETRAIN_CHECKPOINT)));
    }
    run.write_manifest(&manifest)?;

    let report = match recipe {
        Recipe::Bit => pipeline_bit(run, &prep, data, opts),
        Recipe::Bt(ratio) => pipeline_bt(run, &prep, data, opts, ratio),
        Recipe::Kd => pipeline_kd(run, &prep, data, opts),
        Recipe::Dd(ratio) => pipeline_dd(run, &prep, data, opts, ratio),
    }?;
    run.write_report(&report)?;
    Ok(report)
}

/// Bidirectional pretraining followed by finetuning on the required
/// direction (a baseline when the pretraining phase is empty).
fn pipeline_bit(run: &RunDir, prep: &Prepared, data: &RecipeData, opts: &RecipeOptions) -> Result<RecipeReport> {
    let (state, mut metrics) = shared_pretrain(run, prep, opts)?;
    let mut out = finetune_phase(state, &prep.train, &prep.valid, &prep.vocabs, &opts.training, &run.train_dirs())?;
    metrics.append(&mut out.metrics);
    let test = evaluate(run, prep, &out.params, data, &opts.beam)?;
    finish("bit", &prep.train, &metrics, test, Vec::new(), opts)
}

fn finish(
    recipe: &str,
    train: &ParallelCorpus,
    metrics: &[MetricsRecord],
    test: Option<EvalReport>,
    auxiliary: Vec<(String, Option<f64>)>,
    opts: &RecipeOptions,
) -> Result<RecipeReport> {
    let (fwd, swapped) = last_valid(metrics);
    Ok(RecipeReport {
        recipe: recipe.to_string(),
        training_pairs: train.len(),
        pretrain_steps: opts.training.pretrain_steps()?,
        total_steps: opts.training.total_steps,
        final_valid_loss: fwd,
        final_valid_loss_swapped: swapped,
        test,
        auxiliary,
    })
}

/// Model output usable as corpus text: control tokens removed.
fn corpus_text(tokens: Tokens) -> Tokens {
    tokens.into_iter().filter(|t| !is_reserved(t)).collect()
}

/// Back-translations of the sampled monolingual sentences by a reverse
/// model finetuned from the shared phase-1 state.
fn back_translate(
    run: &RunDir,
    prep: &Prepared,
    start: &TrainState,
    mono: &MonoCorpus,
    ratio: MixRatio,
    opts: &RecipeOptions,
) -> Result<(ParallelCorpus, Option<f64>)> {
    let reverse = finetune_aux(
        run,
        "reverse",
        start,
        &prep.train.reversed(),
        &prep.valid.reversed(),
        &prep.vocabs,
        &opts.training,
    )?;
    let seed = opts.training.seed;
    let chosen = bt_selection(prep.train.len(), mono.sentences.len(), ratio, seed)?;
    let picked: Vec<Tokens> = chosen.iter().map(|&i| mono.sentences[i].clone()).collect();
    let segmented = prep.seg.sentences(&picked);
    let translations = segmented
        .iter()
        .map(|s| Ok(corpus_text(translate(&reverse.params, &prep.vocabs, s, &opts.beam)?.tokens)))
        .collect::<Result<Vec<_>>>()?;
    let picked_mono = MonoCorpus::new(segmented, &mono.language)?;
    let bt = assemble_tagged_bt(&prep.train, &picked_mono, &translations, ratio, seed)?;
    write_tsv(&run.corpora("train.bt.tsv"), &bt)?;
    Ok((bt, last_valid(&reverse.metrics).0))
}

/// Teacher outputs for every training source.
fn distill(run: &RunDir, prep: &Prepared, start: &TrainState, opts: &RecipeOptions) -> Result<(ParallelCorpus, Option<f64>)> {
    let teacher = finetune_aux(run, "teacher", start, &prep.train, &prep.valid, &prep.vocabs, &opts.training)?;
    let outputs = prep
        .train
        .pairs
        .iter()
        .map(|p| Ok(corpus_text(translate(&teacher.params, &prep.vocabs, &p.source, &opts.beam)?.tokens)))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Tokens> = outputs
        .into_iter()
        .zip(&prep.train.pairs)
        .map(|(o, p)| if o.is_empty() { p.target.clone() } else { o })
        .collect();
    let kd = assemble_kd(&prep.train, &outputs)?;
    write_tsv(&run.corpora("train.kd.tsv"), &kd)?;
    Ok((kd, last_valid(&teacher.metrics).0))
}

fn train_main(
    run: &RunDir,
    prep: &Prepared,
    start: TrainState,
    mut metrics: Vec<MetricsRecord>,
    corpus: &ParallelCorpus,
    opts: &RecipeOptions,
) -> Result<(PipelineOutput, Vec<MetricsRecord>)> {
    let mut out = finetune_phase(start, corpus, &prep.valid, &prep.vocabs, &opts.training, &run.train_dirs())?;
    metrics.append(&mut out.metrics);
    Ok((out, metrics))
}

fn require_mono(data: &RecipeData) -> Result<&MonoCorpus> {
    match &data.mono {
        Some(m) => Ok(m),
        None => bail!("this recipe needs target-side monolingual text"),
    }
}

/// Tagged back-translation: parallel data plus `<BT>`-tagged synthetic
/// pairs, on top of the shared bidirectional pretraining.
fn pipeline_bt(
    run: &RunDir,
    prep: &Prepared,
    data: &RecipeData,
    opts: &RecipeOptions,
    ratio: MixRatio,
) -> Result<RecipeReport> {
    let mono = require_mono(data)?;
    let (state, metrics) = shared_pretrain(run, prep, opts)?;
    let (bt, reverse_loss) = back_translate(run, prep, &state, mono, ratio, opts)?;
    let (out, metrics) = train_main(run, prep, state, metrics, &bt, opts)?;
    let test = evaluate(run, prep, &out.params, data, &opts.beam)?;
    finish("bt", &bt, &metrics, test, vec![("reverse".into(), reverse_loss)], opts)
}

/// Sequence-level distillation from a teacher of the same architecture.
fn pipeline_kd(run: &RunDir, prep: &Prepared, data: &RecipeData, opts: &RecipeOptions) -> Result<RecipeReport> {
    let (state, metrics) = shared_pretrain(run, prep, opts)?;
    let (kd, teacher_loss) = distill(run, prep, &state, opts)?;
    let (out, metrics) = train_main(run, prep, state, metrics, &kd, opts)?;
    let test = evaluate(run, prep, &out.params, data, &opts.beam)?;
    finish("kd", &kd, &metrics, test, vec![("teacher".into(), teacher_loss)], opts)
}

/// Data diversification: parallel, distilled and back-translated pairs.
fn pipeline_dd(
    run: &RunDir,
    prep: &Prepared,
    data: &RecipeData,
    opts: &RecipeOptions,
    ratio: MixRatio,
) -> Result<RecipeReport> {
    let mono = require_mono(data)?;
    let (state, metrics) = shared_pretrain(run, prep, opts)?;
    let (kd, teacher_loss) = distill(run, prep, &state, opts)?;
    let (bt, reverse_loss) = back_translate(run, prep, &state, mono, ratio, opts)?;
    let bt_only = bt.with_pairs(bt.pairs[prep.train.len()..].to_vec())?;
    let dd = assemble_dd(&prep.train, &kd, &bt_only)?;
    write_tsv(&run.corpora("train.dd.tsv"), &dd)?;
    let (out, metrics) = train_main(run, prep, state, metrics, &dd, opts)?;
    let test = evaluate(run, prep, &out.params, data, &opts.beam)?;
    finish(
        "dd",
        &dd,
        &metrics,
        test,
        vec![("teacher".into(), teacher_loss), ("reverse".into(), reverse_loss)],
        opts,
    )
}

