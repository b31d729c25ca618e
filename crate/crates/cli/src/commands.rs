//! One function per subcommand. Each creates its run directory, writes the
//! manifest before doing any work, and finishes with `report.json`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bitrain_core::corpus::{
    assemble_dd, assemble_kd, assemble_tagged_bt, build_bidirectional, read_alignment_dict, read_mono, read_sentences,
    read_tsv, sentence_level_switch, shuffle_corpus, split_corpus, token_code_switch, write_sentences,
    write_tsv, MixRatio, OriginTag, ParallelCorpus, Tokens,
};
use bitrain_core::decode::BeamConfig;
use bitrain_core::eval::{corpus_aer, corpus_bleu, read_alignments, sentence_bleu, sign_test, write_alignments, EvalReport};
use bitrain_core::model::checkpoint::Checkpoint;
use bitrain_core::model::ModelConfig;
use bitrain_core::synth::{generate_task, oracle_bleu_bound, SynthSpec};
use bitrain_core::tokenizer::{learn_bpe, BpeModel, Vocabs, Vocabulary};
use bitrain_core::trainer::{
    encode_corpus, finish_run, latest_checkpoints, run_model_config, train_segment, Phase, Schedule, TrainState,
    TrainingConfig, ValidSets, FINAL_CHECKPOINT, PRETRAIN_CHECKPOINT,
};
use serde_json::json;

use crate::args::*;
use crate::pipeline::{
    bleu_report, predict_alignments, run_recipe, translate_words, vocab_for, Recipe, RecipeData, RecipeOptions,
    Segmentation,
};
use crate::rundir::{RunDir, RunManifest};
use crate::usage;

pub fn dispatch(cmd: Command) -> Result<()> {
    let name = cmd.name();
    match cmd {
        Command::BuildCorpus(a) => build_corpus(name, a),
        Command::LearnBpe(a) => learn_bpe_cmd(name, a),
        Command::ApplyBpe(a) => apply_bpe(name, a),
        Command::BuildVocab(a) => build_vocab(name, a),
        Command::Train(a) => train(name, a),
        Command::Translate(a) => translate(name, a),
        Command::ScoreBleu(a) => score_bleu(name, a),
        Command::SignTest(a) => sign_test_cmd(name, a),
        Command::AlignEval(a) => align_eval(name, a),
        Command::Synth(a) => synth(name, a),
        Command::PipelineBit(a) => pipeline(name, &a, None, Recipe::Bit),
        Command::PipelineKd(a) => pipeline(name, &a, None, Recipe::Kd),
        Command::PipelineBt(a) => {
            let ratio = parse_ratio(&a.ratio)?;
            pipeline(name, &a.base, Some(&a.mono), Recipe::Bt(ratio))
        }
        Command::PipelineDd(a) => {
            let ratio = parse_ratio(&a.ratio)?;
            pipeline(name, &a.base, Some(&a.mono), Recipe::Dd(ratio))
        }
    }
}

// ------------------------------------------------------------ option resolution

fn parse_ratio(s: &str) -> Result<MixRatio> {
    let r: MixRatio = s.parse().map_err(|e| usage(format!("--ratio: {e}")))?;
    if r.parallel == 0 {
        return Err(usage("--ratio needs a positive parallel part"));
    }
    Ok(r)
}

/// Built-in defaults, then the config file, then flags.
pub fn resolve_training(flags: &TrainingFlags) -> Result<TrainingConfig> {
    let mut cfg = match &flags.config {
        Some(path) => TrainingConfig::load(path).map_err(|e| usage(format!("--config: {e}")))?,
        None => TrainingConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = flags.$field {
                cfg.$field = v;
            })*
        };
    }
    set!(
        total_steps,
        tokens_per_batch,
        warmup_steps,
        lr_init,
        lr_peak,
        lr_floor,
        dropout_rate,
        weight_decay,
        label_smoothing,
        adam_beta1,
        adam_beta2,
        adam_eps,
        checkpoint_interval,
        n_average,
        seed,
        reset_optimizer,
        strict_alternation
    );
    if let Some(d) = flags.decay_steps {
        cfg.decay_steps = Some(d);
    }
    if let Some(f) = flags.pretrain_fraction {
        if f == 0.0 {
            cfg.pretrain_steps = Some(0);
        } else {
            cfg.pretrain_fraction = f;
            cfg.pretrain_steps = None;
        }
    }
    if let Some(p) = flags.pretrain_steps {
        cfg.pretrain_steps = Some(p);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn beam_config(b: &BeamFlags) -> Result<BeamConfig> {
    let cfg = BeamConfig {
        beam_size: b.beam_size,
        length_penalty: b.length_penalty,
        max_len_factor: b.max_len_factor,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_vocabs(files: &VocabFiles) -> Result<Vocabs> {
    Ok(match &files.target_vocab {
        None => Vocabs::Shared(Vocabulary::load(&files.vocab, true)?),
        Some(t) => Vocabs::Split {
            source: Vocabulary::load(&files.vocab, false)?,
            target: Vocabulary::load(t, false)?,
        },
    })
}

fn save_vocabs(run: &RunDir, vocabs: &Vocabs, manifest: &mut RunManifest) -> Result<()> {
    match vocabs {
        Vocabs::Shared(v) => {
            let path = run.bpe("vocab.tsv");
            v.save(&path)?;
            manifest.artifact("vocab", &run.relative(&path));
        }
        Vocabs::Split { source, target } => {
            for (name, v) in [("vocab.src.tsv", source), ("vocab.tgt.tsv", target)] {
                let path = run.bpe(name);
                v.save(&path)?;
                manifest.artifact(name, &run.relative(&path));
            }
        }
    }
    Ok(())
}

fn segmentation(codes: Option<&Path>) -> Result<Segmentation> {
    Ok(Segmentation(codes.map(BpeModel::load).transpose()?))
}

/// Loads a checkpoint and checks it was trained with `vocabs`.
fn load_model(path: &Path, vocabs: &Vocabs) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if let Some(fp) = ck.meta.get("vocab") {
        if *fp != vocabs.fingerprint() {
            bail!("{} was trained with a different vocabulary", path.display());
        }
    }
    if ck.params.config.vocab_size != vocabs.model_size() {
        bail!(
            "{} has {} embedding rows; the vocabulary needs {}",
            path.display(),
            ck.params.config.vocab_size,
            vocabs.model_size()
        );
    }
    Ok(ck)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn origin_counts(c: &ParallelCorpus) -> serde_json::Value {
    OriginTag::ALL
        .iter()
        .filter(|t| c.count_origin(**t) > 0)
        .map(|t| (t.as_str().to_string(), json!(c.count_origin(*t))))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

// ------------------------------------------------------------ corpus commands

fn build_corpus(name: &str, a: BuildCorpusArgs) -> Result<()> {
    let given = [
        ("--probability", a.probability.is_some()),
        ("--switch-ratio", a.switch_ratio.is_some()),
        ("--dict", a.dict.is_some()),
        ("--mono", a.mono.is_some()),
        ("--translations", a.translations.is_some()),
        ("--ratio", a.ratio.is_some()),
        ("--teacher", a.teacher.is_some()),
        ("--kd-corpus", a.kd_corpus.is_some()),
        ("--bt-corpus", a.bt_corpus.is_some()),
        ("--n-valid", a.n_valid.is_some()),
        ("--n-test", a.n_test.is_some()),
    ];
    let (required, optional): (&[&str], &[&str]) = match a.mode {
        CorpusMode::Bidirectional | CorpusMode::Swap | CorpusMode::Shuffle => (&[], &[]),
        CorpusMode::SentenceSwitch => (&[], &["--probability"]),
        CorpusMode::CodeSwitch => (&["--dict", "--switch-ratio"], &[]),
        CorpusMode::Bt => (&["--mono", "--translations"], &["--ratio"]),
        CorpusMode::Kd => (&["--teacher"], &[]),
        CorpusMode::Dd => (&["--kd-corpus", "--bt-corpus"], &[]),
        CorpusMode::Split => (&["--n-valid", "--n-test"], &[]),
    };
    let mode = serde_json::to_value(a.mode)?.as_str().unwrap_or_default().to_string();
    for (flag, set) in given {
        if set && !required.contains(&flag) && !optional.contains(&flag) {
            return Err(usage(format!("{flag} does not apply to --mode {mode}")));
        }
        if !set && required.contains(&flag) {
            return Err(usage(format!("--mode {mode} requires {flag}")));
        }
    }
    let ratio = a.ratio.as_deref().map(parse_ratio).transpose()?;

    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    manifest.seeds.insert("corpus".into(), a.seed);
    manifest.input("input", &a.input)?;
    for (key, path) in [
        ("dict", &a.dict),
        ("mono", &a.mono),
        ("translations", &a.translations),
        ("teacher", &a.teacher),
        ("kd_corpus", &a.kd_corpus),
        ("bt_corpus", &a.bt_corpus),
    ] {
        if let Some(p) = path {
            manifest.input(key, p)?;
        }
    }
    let outputs: Vec<&str> = if a.mode == CorpusMode::Split {
        vec!["train", "valid", "test"]
    } else {
        vec![mode.as_str()]
    };
    for o in &outputs {
        manifest.artifact(o, &run.relative(&run.corpora(&format!("{o}.tsv"))));
    }
    run.write_manifest(&manifest)?;

    let (src, tgt) = (a.langs.source_lang.as_str(), a.langs.target_lang.as_str());
    let input = read_tsv(&a.input, src, tgt)?;
    let corpora: Vec<ParallelCorpus> = match a.mode {
        CorpusMode::Bidirectional => vec![build_bidirectional(&input)?],
        CorpusMode::Swap => vec![input.reversed()],
        CorpusMode::SentenceSwitch => vec![sentence_level_switch(&input, a.probability.unwrap_or(0.5), a.seed)?],
        CorpusMode::CodeSwitch => {
            let dict = read_alignment_dict(a.dict.as_deref().expect("checked"))?;
            vec![token_code_switch(&input, &dict, a.switch_ratio.expect("checked"), a.seed)?]
        }
        CorpusMode::Bt => {
            let mono = read_mono(a.mono.as_deref().expect("checked"), tgt)?;
            let translations = read_sentences(a.translations.as_deref().expect("checked"))?;
            let ratio = ratio.unwrap_or(MixRatio { parallel: 1, mono: 1 });
            vec![assemble_tagged_bt(&input, &mono, &translations, ratio, a.seed)?]
        }
        CorpusMode::Kd => {
            let teacher = read_sentences(a.teacher.as_deref().expect("checked"))?;
            vec![assemble_kd(&input, &teacher)?]
        }
        CorpusMode::Dd => {
            let kd = read_tsv(a.kd_corpus.as_deref().expect("checked"), src, tgt)?;
            let bt = read_tsv(a.bt_corpus.as_deref().expect("checked"), src, tgt)?;
            vec![assemble_dd(&input, &kd, &bt)?]
        }
        CorpusMode::Split => {
            let s = split_corpus(&input, a.n_valid.expect("checked"), a.n_test.expect("checked"), a.seed)?;
            vec![s.train, s.valid, s.test]
        }
        CorpusMode::Shuffle => vec![shuffle_corpus(&input, a.seed)],
    };
    let mut sizes = serde_json::Map::new();
    for (o, c) in outputs.iter().zip(&corpora) {
        write_tsv(&run.corpora(&format!("{o}.tsv")), c)?;
        sizes.insert((*o).to_string(), json!({ "pairs": c.len(), "origins": origin_counts(c) }));
        println!("{o}: {} pairs", c.len());
    }
    run.write_report(&json!({ "mode": mode, "input_pairs": input.len(), "outputs": sizes }))
}

fn learn_bpe_cmd(name: &str, a: LearnBpeArgs) -> Result<()> {
    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    for (i, p) in a.input.iter().enumerate() {
        manifest.input(&format!("input{i}"), p)?;
    }
    for (i, p) in a.text.iter().enumerate() {
        manifest.input(&format!("text{i}"), p)?;
    }
    let codes = run.bpe("codes.txt");
    manifest.artifact("codes", &run.relative(&codes));
    run.write_manifest(&manifest)?;

    let mut sides: Vec<Vec<Tokens>> = Vec::new();
    for p in &a.input {
        let c = read_tsv(p, "src", "tgt")?;
        sides.push(c.pairs.iter().map(|p| p.source.clone()).collect());
        sides.push(c.pairs.iter().map(|p| p.target.clone()).collect());
    }
    for p in &a.text {
        sides.push(read_sentences(p)?);
    }
    let refs: Vec<&[Tokens]> = sides.iter().map(|s| s.as_slice()).collect();
    let model = learn_bpe(&refs, a.merges)?;
    model.save(&codes)?;
    println!("learned {} merges", model.merges().len());
    run.write_report(&json!({ "requested_merges": a.merges, "learned_merges": model.merges().len() }))
}

fn apply_bpe(name: &str, a: ApplyBpeArgs) -> Result<()> {
    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    manifest.input("codes", &a.codes)?;
    let (input, out) = match (&a.input, &a.text) {
        (Some(p), None) => (p, run.corpora(&format!("{}.bpe.tsv", file_stem(p)))),
        (None, Some(p)) => (p, run.corpora(&format!("{}.bpe.txt", file_stem(p)))),
        _ => return Err(usage("give exactly one of --input and --text")),
    };
    manifest.input("input", input)?;
    manifest.artifact("output", &run.relative(&out));
    run.write_manifest(&manifest)?;

    let seg = segmentation(Some(&a.codes))?;
    let n = if a.input.is_some() {
        let c = seg.corpus(&read_tsv(input, "src", "tgt")?)?;
        write_tsv(&out, &c)?;
        c.len()
    } else {
        let s = seg.sentences(&read_sentences(input)?);
        write_sentences(&out, &s)?;
        s.len()
    };
    println!("segmented {n} lines into {}", out.display());
    run.write_report(&json!({ "lines": n, "output": run.relative(&out) }))
}

fn build_vocab(name: &str, a: BuildVocabArgs) -> Result<()> {
    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    manifest.input("input", &a.input)?;
    for (i, p) in a.text.iter().enumerate() {
        manifest.input(&format!("text{i}"), p)?;
    }
    let corpus = read_tsv(&a.input, "src", "tgt")?;
    let mut mono = Vec::new();
    for p in &a.text {
        mono.extend(read_sentences(p)?);
    }
    let vocabs = vocab_for(&corpus, &mono, !a.vocab.split_vocab, a.vocab.min_count)?;
    save_vocabs(&run, &vocabs, &mut manifest)?;
    run.write_manifest(&manifest)?;
    println!("{} model ids", vocabs.model_size());
    run.write_report(&json!({ "model_size": vocabs.model_size(), "shared": vocabs.is_shared() }))
}

// ------------------------------------------------------------ training

/// Copies the step checkpoints next to `init` (up to its step) so the
/// averaging window continues as if training had never stopped.
fn import_step_checkpoints(init: &Path, step: u64, n: usize, into: &Path) -> Result<usize> {
    let Some(dir) = init.parent() else { return Ok(0) };
    if fs::canonicalize(dir).ok() == fs::canonicalize(into).ok() {
        return Ok(0);
    }
    let found = if dir.as_os_str().is_empty() {
        latest_checkpoints(Path::new("."), n, step)?
    } else {
        latest_checkpoints(dir, n, step)?
    };
    for p in &found {
        let dest = into.join(p.file_name().expect("step checkpoint has a name"));
        fs::copy(p, &dest).with_context(|| format!("copying {}", p.display()))?;
    }
    Ok(found.len())
}

fn train(name: &str, a: TrainArgs) -> Result<()> {
    let cfg = resolve_training(&a.training)?;
    let schedule = Schedule::new(&cfg)?;
    let until = a.until_step.unwrap_or(cfg.total_steps);
    if until > cfg.total_steps {
        return Err(usage(format!("--until-step {until} beyond total_steps {}", cfg.total_steps)));
    }
    if a.target_vocab.is_some() && a.vocab_choice.split_vocab {
        return Err(usage("--split-vocab builds vocabularies; it conflicts with --target-vocab"));
    }

    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    manifest.input("train", &a.train)?;
    manifest.input("valid", &a.valid)?;
    let train = read_tsv(&a.train, "src", "tgt")?;
    let valid = read_tsv(&a.valid, "src", "tgt")?;
    let vocabs = match &a.vocab {
        Some(v) => {
            manifest.input("vocab", v)?;
            if let Some(t) = &a.target_vocab {
                manifest.input("target_vocab", t)?;
            }
            load_vocabs(&VocabFiles {
                vocab: v.clone(),
                target_vocab: a.target_vocab.clone(),
            })?
        }
        None => vocab_for(&train, &[], !a.vocab_choice.split_vocab, a.vocab_choice.min_count)?,
    };
    save_vocabs(&run, &vocabs, &mut manifest)?;
    let fingerprint = vocabs.fingerprint();
    let dirs = run.train_dirs();
    dirs.prepare()?;

    let mut state = match &a.init_checkpoint {
        Some(path) => {
            manifest.input("init_checkpoint", path)?;
            let ck = load_model(path, &vocabs)?;
            let mut state = TrainState::from_checkpoint(ck)?;
            state.params.config.dropout_rate = cfg.dropout_rate;
            import_step_checkpoints(path, state.step, cfg.n_average, &dirs.checkpoints)?;
            state
        }
        None => {
            let base = ModelConfig::preset(a.model_preset.name(), vocabs.model_size())?;
            TrainState::init(&run_model_config(&base, &vocabs, &cfg))?
        }
    };
    if state.step > until {
        return Err(usage(format!(
            "checkpoint is at step {}, past the requested end {until}",
            state.step
        )));
    }
    let start = state.step;
    manifest.training = Some(cfg.clone());
    manifest.model = Some(state.params.config.clone());
    manifest.seeds.insert("training".into(), cfg.seed);
    manifest.seeds.insert("init".into(), state.params.config.init_seed);
    manifest.planned.insert("start_step".into(), start);
    manifest.planned.insert("end_step".into(), until);
    manifest.planned.insert("training_pairs".into(), train.len() as u64);
    manifest.artifact("metrics", &run.relative(&dirs.metrics));
    if start < schedule.pretrain_steps && schedule.pretrain_steps <= until {
        manifest.artifact("pretrain_checkpoint", &run.relative(&dirs.checkpoints.join(PRETRAIN_CHECKPOINT)));
    }
    if until == cfg.total_steps {
        manifest.artifact("final_checkpoint", &run.relative(&dirs.checkpoints.join(FINAL_CHECKPOINT)));
    }
    run.write_manifest(&manifest)?;

    let pairs = encode_corpus(&train, &vocabs);
    let valid_sets = ValidSets::new(&valid, &vocabs);
    let mut metrics = Vec::new();
    // Segments split at the phase boundary so each phase gets its own
    // batch stream, exactly as in the pipeline.
    let boundary = schedule.pretrain_steps;
    if state.step < boundary {
        let end = until.min(boundary);
        metrics.extend(train_segment(&mut state, &pairs, end, &valid_sets, &cfg, &schedule, &dirs, &fingerprint)?);
        if state.step == boundary {
            state
                .to_checkpoint(&fingerprint, Phase::Pretrain)
                .save(&dirs.checkpoints.join(PRETRAIN_CHECKPOINT))?;
        }
    }
    if state.step < until {
        metrics.extend(train_segment(&mut state, &pairs, until, &valid_sets, &cfg, &schedule, &dirs, &fingerprint)?);
    }
    let final_checkpoint = if state.step == cfg.total_steps {
        let (_, path) = finish_run(&dirs, cfg.n_average, cfg.total_steps, &fingerprint)?;
        Some(run.relative(&path))
    } else {
        None
    };
    let last = metrics.last();
    println!(
        "trained steps {start}..{}; valid loss {}",
        state.step,
        last.map_or("n/a".into(), |m| format!("{:.4}", m.valid_loss_fwd))
    );
    run.write_report(&json!({
        "start_step": start,
        "end_step": state.step,
        "pretrain_steps": boundary,
        "total_steps": cfg.total_steps,
        "final_valid_loss": last.map(|m| m.valid_loss_fwd),
        "final_valid_loss_swapped": last.and_then(|m| m.valid_loss_swapped),
        "final_checkpoint": final_checkpoint,
    }))
}

// ------------------------------------------------------------ decoding and scoring

fn translate(name: &str, a: TranslateArgs) -> Result<()> {
    let beam = beam_config(&a.beam)?;
    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    manifest.input("checkpoint", &a.checkpoint)?;
    manifest.input("vocab", &a.vocab.vocab)?;
    if let Some(t) = &a.vocab.target_vocab {
        manifest.input("target_vocab", t)?;
    }
    if let Some(c) = &a.codes {
        manifest.input("codes", c)?;
    }
    manifest.input("input", &a.input)?;
    let out = run.corpora("translations.txt");
    manifest.artifact("translations", &run.relative(&out));
    run.write_manifest(&manifest)?;

    let vocabs = load_vocabs(&a.vocab)?;
    let ck = load_model(&a.checkpoint, &vocabs)?;
    let seg = segmentation(a.codes.as_deref())?;
    let sources = read_sentences(&a.input)?;
    let hyps = translate_words(&ck.params, &vocabs, &seg, &sources, &beam)?;
    write_sentences(&out, &hyps)?;
    println!("translated {} sentences into {}", hyps.len(), out.display());
    run.write_report(&json!({ "sentences": hyps.len(), "output": run.relative(&out) }))
}

fn read_pair(hyps: &Path, refs: &Path) -> Result<(Vec<Tokens>, Vec<Tokens>)> {
    let h = read_sentences(hyps)?;
    let r = read_sentences(refs)?;
    if h.len() != r.len() {
        bail!("{} has {} lines, {} has {}", hyps.display(), h.len(), refs.display(), r.len());
    }
    Ok((h, r))
}

fn score_bleu(name: &str, a: ScoreBleuArgs) -> Result<()> {
    if a.max_n == 0 {
        return Err(usage("--max-n must be at least 1"));
    }
    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    manifest.input("hyps", &a.hyps)?;
    manifest.input("refs", &a.refs)?;
    run.write_manifest(&manifest)?;
    let (h, r) = read_pair(&a.hyps, &a.refs)?;
    let report = EvalReport::from_bleu(&corpus_bleu(&h, &r, a.max_n)?);
    println!("{}", report.summary());
    run.write_report(&report)
}

fn sign_test_cmd(name: &str, a: SignTestArgs) -> Result<()> {
    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    manifest.input("hyps_a", &a.hyps_a)?;
    manifest.input("hyps_b", &a.hyps_b)?;
    manifest.input("refs", &a.refs)?;
    run.write_manifest(&manifest)?;
    let (ha, r) = read_pair(&a.hyps_a, &a.refs)?;
    let (hb, _) = read_pair(&a.hyps_b, &a.refs)?;
    let score = |hs: &[Tokens]| -> Vec<f64> { hs.iter().zip(&r).map(|(h, r)| sentence_bleu(h, r, 4)).collect() };
    let test = sign_test(&score(&ha), &score(&hb))?;
    let (a_bleu, b_bleu) = (bleu_report(&ha, &r)?, bleu_report(&hb, &r)?);
    println!(
        "A {:.1} vs B {:.1}: {} wins, {} losses, {} ties, p = {:.4}",
        a_bleu.bleu, b_bleu.bleu, test.wins, test.losses, test.ties, test.p_value
    );
    run.write_report(&json!({ "a": a_bleu, "b": b_bleu, "sign_test": test }))
}

fn align_eval(name: &str, a: AlignEvalArgs) -> Result<()> {
    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    manifest.input("checkpoint", &a.checkpoint)?;
    manifest.input("corpus", &a.corpus)?;
    manifest.input("gold", &a.gold)?;
    run.write_manifest(&manifest)?;

    let vocabs = load_vocabs(&a.vocab)?;
    let ck = load_model(&a.checkpoint, &vocabs)?;
    let seg = segmentation(a.codes.as_deref())?;
    let corpus = read_tsv(&a.corpus, "src", "tgt")?;
    let mut gold = read_alignments(&a.gold, &corpus)?;
    let corpus = if a.reverse {
        gold = gold.iter().map(|g| g.transposed()).collect();
        corpus.reversed()
    } else {
        corpus
    };
    let links = predict_alignments(&ck.params, &vocabs, &seg, &corpus)?;
    let scores = corpus_aer(&links, &gold)?;
    println!(
        "AER {:.4} (precision {:.4}, recall {:.4})",
        scores.aer, scores.precision, scores.recall
    );
    run.write_report(&scores)
}

// ------------------------------------------------------------ synthetic data

fn synth(name: &str, a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        src_vocab: a.src_vocab,
        tgt_vocab: a.tgt_vocab,
        lexicon_seed: a.lexicon_seed,
        reordering: a.reordering.parse().map_err(|e| usage(format!("--reordering: {e}")))?,
        min_len: a.min_len,
        max_len: a.max_len,
        n_train: a.n_train,
        n_valid: a.n_valid,
        n_test: a.n_test,
        noise: a.noise,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let run = RunDir::create(&a.out.out)?;
    let mut manifest = RunManifest::new(name, &a)?;
    manifest.seeds.insert("task".into(), a.seed);
    manifest.seeds.insert("lexicon".into(), a.lexicon_seed);
    let files = ["train.tsv", "valid.tsv", "test.tsv", "test.align"];
    for f in files {
        manifest.artifact(f, &run.relative(&run.corpora(f)));
    }
    run.write_manifest(&manifest)?;

    let task = generate_task(&spec, a.seed)?;
    write_tsv(&run.corpora("train.tsv"), &task.train)?;
    write_tsv(&run.corpora("valid.tsv"), &task.valid)?;
    write_tsv(&run.corpora("test.tsv"), &task.test)?;
    write_alignments(&run.corpora("test.align"), &task.test_alignments)?;
    let bound = oracle_bleu_bound(&spec).ok();
    println!(
        "{}/{}/{} pairs written to {}",
        task.train.len(),
        task.valid.len(),
        task.test.len(),
        run.root().join("corpora").display()
    );
    run.write_report(&json!({
        "spec": spec,
        "train_pairs": task.train.len(),
        "valid_pairs": task.valid.len(),
        "test_pairs": task.test.len(),
        "oracle_bleu": bound,
    }))
}

// ------------------------------------------------------------ recipes

fn pipeline(name: &str, a: &PipelineArgs, mono: Option<&Path>, recipe: Recipe) -> Result<()> {
    let training = resolve_training(&a.training)?;
    let beam = beam_config(&a.beam)?;
    if a.merges == Some(0) {
        return Err(usage("--merges must be positive; omit it to stay at the word level"));
    }
    let model = ModelConfig::preset(a.model_preset.name(), 0)?;
    let opts = RecipeOptions {
        training,
        model,
        beam,
        merges: a.merges,
        shared_vocab: !a.vocab_choice.split_vocab,
        min_count: a.vocab_choice.min_count,
    };
    if opts.training.pretrain_steps()? > 0 && !opts.shared_vocab {
        return Err(usage("bidirectional pretraining needs a shared vocabulary; drop --split-vocab"));
    }

    let run = RunDir::create(&a.out.out)?;
    let options = json!({ "args": a, "mono": mono, "recipe": name });
    let mut manifest = RunManifest::new(name, options)?;
    manifest.input("train", &a.train)?;
    manifest.input("valid", &a.valid)?;
    for (key, path) in [("test", a.test.as_deref()), ("test_align", a.test_align.as_deref()), ("mono", mono)] {
        if let Some(p) = path {
            manifest.input(key, p)?;
        }
    }

    let (src, tgt) = (a.langs.source_lang.as_str(), a.langs.target_lang.as_str());
    let test = a.test.as_deref().map(|p| read_tsv(p, src, tgt)).transpose()?;
    let test_alignments = match (&a.test_align, &test) {
        (Some(p), Some(t)) => Some(read_alignments(p, t)?),
        _ => None,
    };
    let data = RecipeData {
        train: read_tsv(&a.train, src, tgt)?,
        valid: read_tsv(&a.valid, src, tgt)?,
        test,
        test_alignments,
        mono: mono.map(|p| read_mono(p, tgt)).transpose()?,
    };
    let report = run_recipe(&run, &data, &opts, recipe, manifest)?;
    println!(
        "{}: {} training pairs, {} + {} steps",
        report.recipe,
        report.training_pairs,
        report.pretrain_steps,
        report.total_steps - report.pretrain_steps
    );
    if let Some(t) = &report.test {
        println!("{}", t.summary());
    }
    Ok(())
}
