//! Parallel-data manipulation: bidirectional reconstruction, swapping,
//! back-translation / distillation / diversification assembly,
//! code-switching, splitting and shuffling.
//!
//! Every operation is a pure function of its inputs and seed. Sampling
//! always draws from [`SplitMix64`] streams named after the operation, so
//! the same seed yields byte-identical corpora.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{label, SplitMix64};
use crate::special::{is_reserved, BT_TOKEN};

pub type Tokens = Vec<String>;

/// Where a pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginTag {
    Original,
    Swapped,
    SyntheticBt,
    Distilled,
    Diversified,
}

impl OriginTag {
    pub const ALL: [OriginTag; 5] = [
        OriginTag::Original,
        OriginTag::Swapped,
        OriginTag::SyntheticBt,
        OriginTag::Distilled,
        OriginTag::Diversified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OriginTag::Original => "original",
            OriginTag::Swapped => "swapped",
            OriginTag::SyntheticBt => "synthetic_bt",
            OriginTag::Distilled => "distilled",
            OriginTag::Diversified => "diversified",
        }
    }

    /// Tag after exchanging source and target.
    pub fn swapped(self) -> OriginTag {
        match self {
            OriginTag::Original => OriginTag::Swapped,
            OriginTag::Swapped => OriginTag::Original,
            other => other,
        }
    }
}

impl fmt::Display for OriginTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OriginTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OriginTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown origin tag {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Tokens,
    pub target: Tokens,
    pub origin: OriginTag,
}

fn check_tokens(side: &str, tokens: &[String], origin: OriginTag) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::invalid(format!("empty {side} sentence")));
    }
    for t in tokens {
        if t.is_empty() || t.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("{side} token {t:?} is empty or has whitespace")));
        }
        if is_reserved(t) && !(t == BT_TOKEN && origin == OriginTag::SyntheticBt) {
            return Err(Error::invalid(format!(
                "{side} token {t} is reserved (origin {origin})"
            )));
        }
    }
    Ok(())
}

impl SentencePair {
    pub fn new(source: Tokens, target: Tokens, origin: OriginTag) -> Result<Self> {
        check_tokens("source", &source, origin)?;
        check_tokens("target", &target, origin)?;
        Ok(Self {
            source,
            target,
            origin,
        })
    }

    /// Whitespace-tokenized constructor tagged `original`.
    pub fn parse(source: &str, target: &str) -> Result<Self> {
        Self::new(split(source), split(target), OriginTag::Original)
    }

    fn key(&self) -> (String, String) {
        (self.source.join(" "), self.target.join(" "))
    }
}

pub fn split(line: &str) -> Tokens {
    line.split_whitespace().map(str::to_string).collect()
}

/// Ordered pairs plus the language labels naming which side is the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub source_lang: String,
    pub target_lang: String,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>, source_lang: &str, target_lang: &str) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("parallel corpus must hold at least one pair"));
        }
        Ok(Self {
            pairs,
            source_lang: source_lang.to_string(),
            target_lang: target_lang.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn direction_label(&self) -> String {
        format!("{}-{}", self.source_lang, self.target_lang)
    }

    pub fn with_pairs(&self, pairs: Vec<SentencePair>) -> Result<Self> {
        Self::new(pairs, &self.source_lang, &self.target_lang)
    }

    /// Every pair swapped and the language labels exchanged: the reverse
    /// translation direction.
    pub fn reversed(&self) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self.pairs.iter().map(swap_pair).collect(),
            source_lang: self.target_lang.clone(),
            target_lang: self.source_lang.clone(),
        }
    }

    pub fn count_origin(&self, tag: OriginTag) -> usize {
        self.pairs.iter().filter(|p| p.origin == tag).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonoCorpus {
    pub sentences: Vec<Tokens>,
    pub language: String,
}

impl MonoCorpus {
    pub fn new(sentences: Vec<Tokens>, language: &str) -> Result<Self> {
        if let Some(i) = sentences.iter().position(|s| s.is_empty()) {
            return Err(Error::invalid(format!("monolingual sentence {i} is empty")));
        }
        Ok(Self {
            sentences,
            language: language.to_string(),
        })
    }
}

/// Bilingual lexicon used by the token-level code-switch baseline.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentDict {
    entries: BTreeMap<String, Vec<String>>,
}

impl AlignmentDict {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: &str, target: &str) {
        self.entries
            .entry(source.to_string())
            .or_default()
            .push(target.to_string());
    }

    pub fn candidates(&self, source: &str) -> Option<&[String]> {
        self.entries.get(source).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// ------------------------------------------------------------------- ops

pub fn swap_pair(p: &SentencePair) -> SentencePair {
    SentencePair {
        source: p.target.clone(),
        target: p.source.clone(),
        origin: p.origin.swapped(),
    }
}

/// The N originals in order followed by their N swaps.
pub fn build_bidirectional(c: &ParallelCorpus) -> Result<ParallelCorpus> {
    if c.is_empty() {
        return Err(Error::invalid("cannot double an empty corpus"));
    }
    let mut pairs = Vec::with_capacity(2 * c.len());
    pairs.extend(c.pairs.iter().cloned());
    pairs.extend(c.pairs.iter().map(swap_pair));
    c.with_pairs(pairs)
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} {p} outside [0, 1]")))
    }
}

/// Swaps each pair independently with probability `p`.
pub fn sentence_level_switch(c: &ParallelCorpus, p: f64, seed: u64) -> Result<ParallelCorpus> {
    check_probability("switch probability", p)?;
    let mut rng = SplitMix64::from_labels(seed, &[label("sentence_level_switch")]);
    let pairs = c
        .pairs
        .iter()
        .map(|pair| {
            if rng.next_f64() < p {
                swap_pair(pair)
            } else {
                pair.clone()
            }
        })
        .collect();
    c.with_pairs(pairs)
}

/// Replaces `ceil(ratio * len(source))` dictionary-covered source tokens
/// per pair with a uniformly chosen candidate. Uncovered tokens are never
/// counted; targets are untouched.
pub fn token_code_switch(
    c: &ParallelCorpus,
    dict: &AlignmentDict,
    ratio: f64,
    seed: u64,
) -> Result<ParallelCorpus> {
    check_probability("code-switch ratio", ratio)?;
    let mut rng = SplitMix64::from_labels(seed, &[label("token_code_switch")]);
    let mut pairs = Vec::with_capacity(c.len());
    for pair in &c.pairs {
        let covered: Vec<usize> = pair
            .source
            .iter()
            .enumerate()
            .filter(|(_, t)| dict.candidates(t).is_some())
            .map(|(i, _)| i)
            .collect();
        let want = (ratio * pair.source.len() as f64).ceil() as usize;
        let k = want.min(covered.len());
        let mut source = pair.source.clone();
        for pick in rng.sample_indices(covered.len(), k) {
            let pos = covered[pick];
            let cands = dict.candidates(&pair.source[pos]).expect("covered");
            source[pos] = cands[rng.below(cands.len() as u64) as usize].clone();
        }
        pairs.push(SentencePair::new(source, pair.target.clone(), pair.origin)?);
    }
    c.with_pairs(pairs)
}

/// `parallel : monolingual`, e.g. 1:1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixRatio {
    pub parallel: u64,
    pub mono: u64,
}

impl FromStr for MixRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("ratio {s:?} is not of the form P:M")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u64>()
                .map_err(|_| Error::invalid(format!("ratio {s:?} has a non-integer part")))
        };
        Ok(MixRatio {
            parallel: parse(a)?,
            mono: parse(b)?,
        })
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.parallel, self.mono)
    }
}

/// Indices (ascending) of the monolingual sentences a tagged-BT corpus
/// keeps: `parallel_len * mono / parallel` of them, capped at `mono_len`.
pub fn bt_selection(parallel_len: usize, mono_len: usize, ratio: MixRatio, seed: u64) -> Result<Vec<usize>> {
    if ratio.parallel == 0 {
        return Err(Error::invalid(format!("ratio {ratio} has a zero parallel part")));
    }
    let wanted = (parallel_len as u128 * ratio.mono as u128 / ratio.parallel as u128) as usize;
    let k = wanted.min(mono_len);
    let mut rng = SplitMix64::from_labels(seed, &[label("assemble_tagged_bt")]);
    let mut chosen = rng.sample_indices(mono_len, k);
    chosen.sort_unstable();
    Ok(chosen)
}

/// Tagged back-translation: parallel pairs followed by synthetic pairs
/// `(<BT> + reverse translation, monolingual sentence)`. The monolingual
/// side is trimmed to the requested ratio by a seeded uniform sample that
/// keeps corpus order.
pub fn assemble_tagged_bt(
    parallel: &ParallelCorpus,
    mono: &MonoCorpus,
    reverse_translations: &[Tokens],
    ratio: MixRatio,
    seed: u64,
) -> Result<ParallelCorpus> {
    if reverse_translations.len() != mono.sentences.len() {
        return Err(Error::invalid(format!(
            "{} reverse translations for {} monolingual sentences",
            reverse_translations.len(),
            mono.sentences.len()
        )));
    }
    let chosen = bt_selection(parallel.len(), mono.sentences.len(), ratio, seed)?;
    let mut pairs = parallel.pairs.clone();
    for i in chosen {
        let mut source = Vec::with_capacity(reverse_translations[i].len() + 1);
        source.push(BT_TOKEN.to_string());
        source.extend(reverse_translations[i].iter().cloned());
        pairs.push(SentencePair::new(
            source,
            mono.sentences[i].clone(),
            OriginTag::SyntheticBt,
        )?);
    }
    parallel.with_pairs(pairs)
}

/// Sequence-level distillation: gold targets replaced by teacher outputs.
pub fn assemble_kd(parallel: &ParallelCorpus, teacher_outputs: &[Tokens]) -> Result<ParallelCorpus> {
    if teacher_outputs.len() != parallel.len() {
        return Err(Error::invalid(format!(
            "{} teacher outputs for {} pairs",
            teacher_outputs.len(),
            parallel.len()
        )));
    }
    let pairs = parallel
        .pairs
        .iter()
        .zip(teacher_outputs)
        .map(|(p, t)| SentencePair::new(p.source.clone(), t.clone(), OriginTag::Distilled))
        .collect::<Result<Vec<_>>>()?;
    parallel.with_pairs(pairs)
}

/// Data diversification: `parallel ++ kd ++ bt`, exact duplicates dropped
/// (first occurrence wins).
pub fn assemble_dd(
    parallel: &ParallelCorpus,
    kd_corpus: &ParallelCorpus,
    bt_corpus: &ParallelCorpus,
) -> Result<ParallelCorpus> {
    let mut seen = HashSet::new();
    let pairs = parallel
        .pairs
        .iter()
        .chain(&kd_corpus.pairs)
        .chain(&bt_corpus.pairs)
        .filter(|p| seen.insert(p.key()))
        .cloned()
        .collect();
    parallel.with_pairs(pairs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// Seeded sample without replacement of `n_valid + n_test` pairs; each
/// split keeps the original corpus order.
pub fn split_corpus(c: &ParallelCorpus, n_valid: usize, n_test: usize, seed: u64) -> Result<Splits> {
    if n_valid + n_test >= c.len() {
        return Err(Error::invalid(format!(
            "cannot hold out {n_valid}+{n_test} of {} pairs and keep a training set",
            c.len()
        )));
    }
    if n_valid == 0 || n_test == 0 {
        return Err(Error::invalid("validation and test splits must be non-empty"));
    }
    let mut rng = SplitMix64::from_labels(seed, &[label("split_corpus")]);
    let picked = rng.sample_indices(c.len(), n_valid + n_test);
    let mut role = vec![0u8; c.len()];
    for (rank, &i) in picked.iter().enumerate() {
        role[i] = if rank < n_valid { 1 } else { 2 };
    }
    let take = |r: u8| -> Vec<SentencePair> {
        c.pairs
            .iter()
            .zip(&role)
            .filter(|(_, &x)| x == r)
            .map(|(p, _)| p.clone())
            .collect()
    };
    Ok(Splits {
        train: c.with_pairs(take(0))?,
        valid: c.with_pairs(take(1))?,
        test: c.with_pairs(take(2))?,
    })
}

pub fn shuffle_corpus(c: &ParallelCorpus, seed: u64) -> ParallelCorpus {
    let mut pairs = c.pairs.clone();
    SplitMix64::from_labels(seed, &[label("shuffle_corpus")]).shuffle(&mut pairs);
    ParallelCorpus { pairs, ..c.clone() }
}

// -------------------------------------------------------------------- io

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect())
}

fn parse_err(path: &Path, line: usize, e: Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

/// `source TAB target [TAB origin_tag]` per line.
pub fn read_tsv(path: &Path, source_lang: &str, target_lang: &str) -> Result<ParallelCorpus> {
    let mut pairs = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        let pair = match fields.as_slice() {
            [s, t] => SentencePair::new(split(s), split(t), OriginTag::Original),
            [s, t, tag] => tag
                .parse()
                .and_then(|origin| SentencePair::new(split(s), split(t), origin)),
            _ => Err(Error::invalid(format!("expected 2 or 3 tab-separated fields, got {}", fields.len()))),
        }
        .map_err(|e| parse_err(path, i + 1, e))?;
        pairs.push(pair);
    }
    ParallelCorpus::new(pairs, source_lang, target_lang).map_err(|e| parse_err(path, 0, e))
}

pub fn tsv_string(c: &ParallelCorpus) -> String {
    let mut out = String::new();
    for p in &c.pairs {
        out.push_str(&p.source.join(" "));
        out.push('\t');
        out.push_str(&p.target.join(" "));
        out.push('\t');
        out.push_str(p.origin.as_str());
        out.push('\n');
    }
    out
}

pub fn write_tsv(path: &Path, c: &ParallelCorpus) -> Result<()> {
    write_file(path, tsv_string(c).as_bytes())
}

/// Two line-aligned plain-text files.
pub fn read_parallel_files(
    source: &Path,
    target: &Path,
    source_lang: &str,
    target_lang: &str,
) -> Result<ParallelCorpus> {
    let src = read_lines(source)?;
    let tgt = read_lines(target)?;
    if src.len() != tgt.len() {
        return Err(Error::invalid(format!(
            "{} has {} lines but {} has {}",
            source.display(),
            src.len(),
            target.display(),
            tgt.len()
        )));
    }
    let pairs = src
        .iter()
        .zip(&tgt)
        .enumerate()
        .map(|(i, (s, t))| SentencePair::parse(s, t).map_err(|e| parse_err(source, i + 1, e)))
        .collect::<Result<Vec<_>>>()?;
    ParallelCorpus::new(pairs, source_lang, target_lang)
}

pub fn write_parallel_files(source: &Path, target: &Path, c: &ParallelCorpus) -> Result<()> {
    let side = |f: fn(&SentencePair) -> &Tokens| -> String {
        c.pairs.iter().map(|p| f(p).join(" ") + "\n").collect()
    };
    write_file(source, side(|p| &p.source).as_bytes())?;
    write_file(target, side(|p| &p.target).as_bytes())
}

pub fn read_sentences(path: &Path) -> Result<Vec<Tokens>> {
    Ok(read_lines(path)?.iter().map(|l| split(l)).collect())
}

pub fn write_sentences(path: &Path, sentences: &[Tokens]) -> Result<()> {
    let text: String = sentences.iter().map(|s| s.join(" ") + "\n").collect();
    write_file(path, text.as_bytes())
}

pub fn read_mono(path: &Path, language: &str) -> Result<MonoCorpus> {
    let sentences = read_sentences(path)?;
    MonoCorpus::new(sentences, language).map_err(|e| parse_err(path, 0, e))
}

/// `src_token TAB tgt_token` lines; repeats accumulate candidates.
pub fn read_alignment_dict(path: &Path) -> Result<AlignmentDict> {
    let mut dict = AlignmentDict::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match line.split('\t').collect::<Vec<_>>().as_slice() {
            [s, t] if !s.is_empty() && !t.is_empty() => dict.insert(s, t),
            _ => {
                return Err(parse_err(
                    path,
                    i + 1,
                    Error::invalid("expected `src TAB tgt`"),
                ))
            }
        }
    }
    Ok(dict)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(
            pairs.iter().map(|(s, t)| SentencePair::parse(s, t).unwrap()).collect(),
            "xx",
            "yy",
        )
        .unwrap()
    }

    #[test]
    fn swap_exchanges_sides_and_tags() {
        let p = SentencePair::parse("a b", "X Y").unwrap();
        let s = swap_pair(&p);
        assert_eq!(s.source, split("X Y"));
        assert_eq!(s.target, split("a b"));
        assert_eq!(s.origin, OriginTag::Swapped);
        assert_eq!(swap_pair(&s), p);
    }

    #[test]
    fn swap_of_chinese_example() {
        let p = SentencePair::parse("布什 与 沙龙 举行 了 会谈", "Bush held a talk with Sharon").unwrap();
        let s = swap_pair(&p);
        assert_eq!(s.source.join(" "), "Bush held a talk with Sharon");
        assert_eq!(s.target.join(" "), "布什 与 沙龙 举行 了 会谈");
    }

    #[test]
    fn swap_keeps_non_direction_tags() {
        let p = SentencePair::new(split("<BT> a"), split("b"), OriginTag::SyntheticBt).unwrap();
        assert_eq!(swap_pair(&p).origin, OriginTag::SyntheticBt);
    }

    #[test]
    fn pair_invariants() {
        assert!(SentencePair::parse("", "a").is_err());
        assert!(SentencePair::parse("a <eos>", "b").is_err());
        assert!(SentencePair::parse("<BT> a", "b").is_err());
        assert!(SentencePair::new(split("<BT> a"), split("b"), OriginTag::SyntheticBt).is_ok());
        assert!(SentencePair::new(vec!["a b".into()], split("b"), OriginTag::Original).is_err());
        assert!(ParallelCorpus::new(vec![], "a", "b").is_err());
        assert!(MonoCorpus::new(vec![vec![]], "de").is_err());
    }

    #[test]
    fn bidirectional_single_pair() {
        let c = corpus(&[("a b", "X Y")]);
        let b = build_bidirectional(&c).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.pairs[0], c.pairs[0]);
        assert_eq!(b.pairs[1].source, split("X Y"));
        assert_eq!(b.pairs[1].target, split("a b"));
    }

    #[test]
    fn bidirectional_ordering() {
        let c = corpus(&[("a", "A"), ("b", "B"), ("c", "C")]);
        let b = build_bidirectional(&c).unwrap();
        assert_eq!(b.len(), 6);
        for i in 0..3 {
            assert_eq!(b.pairs[i], c.pairs[i]);
            assert_eq!(b.pairs[3 + i], swap_pair(&b.pairs[i]));
        }
    }

    #[test]
    fn sentence_switch_extremes() {
        let c = corpus(&[("a", "A"), ("b", "B"), ("c", "C")]);
        assert_eq!(sentence_level_switch(&c, 0.0, 9).unwrap(), c);
        let all = sentence_level_switch(&c, 1.0, 9).unwrap();
        assert_eq!(all.pairs, c.pairs.iter().map(swap_pair).collect::<Vec<_>>());
        assert!(sentence_level_switch(&c, 1.5, 9).is_err());
        assert!(sentence_level_switch(&c, -0.1, 9).is_err());
    }

    #[test]
    fn sentence_switch_half_is_binomial() {
        // Binomial(10000, 1/2) has sd 50; [4600, 5400] is the ±8 sd window,
        // comfortably containing the 4-sd band [4800, 5200].
        let pairs: Vec<_> = (0..10_000)
            .map(|i| SentencePair::parse(&format!("s{i}"), &format!("t{i}")).unwrap())
            .collect();
        let c = ParallelCorpus::new(pairs, "s", "t").unwrap();
        for seed in [0, 1, 2, 3] {
            let out = sentence_level_switch(&c, 0.5, seed).unwrap();
            let n = out.count_origin(OriginTag::Swapped);
            assert!((4600..=5400).contains(&n), "seed {seed}: {n}");
        }
    }

    #[test]
    fn code_switch_skips_uncovered_tokens() {
        let c = corpus(&[("a b", "X Y")]);
        let mut dict = AlignmentDict::new();
        dict.insert("a", "α");
        let out = token_code_switch(&c, &dict, 1.0, 0).unwrap();
        assert_eq!(out.pairs[0].source, split("α b"));
        assert_eq!(out.pairs[0].target, split("X Y"));
        assert_eq!(token_code_switch(&c, &dict, 0.0, 0).unwrap(), c);
        assert!(token_code_switch(&c, &dict, 2.0, 0).is_err());
    }

    #[test]
    fn code_switch_replaced_fraction_near_ratio() {
        // Every token is covered and lengths are multiples of 10, so
        // ceil(0.3 L) / L is exactly 0.3 per sentence.
        let mut dict = AlignmentDict::new();
        for k in 0..50 {
            dict.insert(&format!("w{k}"), &format!("v{k}"));
        }
        let mut rng = SplitMix64::new(5);
        let pairs: Vec<_> = (0..1000)
            .map(|_| {
                let len = 10 * (1 + rng.below(2) as usize);
                let s: Vec<String> = (0..len).map(|_| format!("w{}", rng.below(50))).collect();
                SentencePair::new(s, split("t"), OriginTag::Original).unwrap()
            })
            .collect();
        let c = ParallelCorpus::new(pairs, "w", "t").unwrap();
        let out = token_code_switch(&c, &dict, 0.3, 11).unwrap();
        let (mut replaced, mut covered) = (0usize, 0usize);
        for (a, b) in c.pairs.iter().zip(&out.pairs) {
            covered += a.source.len();
            replaced += a.source.iter().zip(&b.source).filter(|(x, y)| x != y).count();
        }
        let frac = replaced as f64 / covered as f64;
        assert!((frac - 0.3).abs() <= 0.05, "{frac}");
    }

    fn mono(n: usize) -> (MonoCorpus, Vec<Tokens>) {
        let m = MonoCorpus::new((0..n).map(|i| split(&format!("m{i}"))).collect(), "de").unwrap();
        let r = (0..n).map(|i| split(&format!("r{i}"))).collect();
        (m, r)
    }

    #[test]
    fn tagged_bt_one_to_one() {
        let par = ParallelCorpus::new(
            (0..100).map(|i| SentencePair::parse(&format!("s{i}"), &format!("t{i}")).unwrap()).collect(),
            "en",
            "de",
        )
        .unwrap();
        let (m, r) = mono(250);
        let ratio: MixRatio = "1:1".parse().unwrap();
        let out = assemble_tagged_bt(&par, &m, &r, ratio, 3).unwrap();
        assert_eq!(out.len(), 200);
        assert_eq!(out.count_origin(OriginTag::SyntheticBt), 100);
        for p in &out.pairs[100..] {
            assert_eq!(p.source[0], "<BT>");
            let i: usize = p.target[0][1..].parse().unwrap();
            assert_eq!(p.source[1], format!("r{i}"));
        }
        assert_eq!(out, assemble_tagged_bt(&par, &m, &r, ratio, 3).unwrap());
    }

    #[test]
    fn tagged_bt_edge_cases() {
        let par = corpus(&[("a", "A")]);
        let (empty, none) = mono(0);
        let out = assemble_tagged_bt(&par, &empty, &none, "1:0".parse().unwrap(), 0).unwrap();
        assert_eq!(out, par);
        let (m, r) = mono(3);
        assert!(assemble_tagged_bt(&par, &m, &r[..2], "1:1".parse().unwrap(), 0).is_err());
        assert!(assemble_tagged_bt(&par, &m, &r, "0:1".parse().unwrap(), 0).is_err());
        assert!("1-1".parse::<MixRatio>().is_err());
    }

    #[test]
    fn kd_replaces_targets() {
        let c = corpus(&[("a b", "X"), ("c", "Y Z")]);
        let same: Vec<Tokens> = c.pairs.iter().map(|p| p.target.clone()).collect();
        let kd = assemble_kd(&c, &same).unwrap();
        for (a, b) in c.pairs.iter().zip(&kd.pairs) {
            assert_eq!((&a.source, &a.target), (&b.source, &b.target));
            assert_eq!(b.origin, OriginTag::Distilled);
        }
        let teacher = vec![split("P"), split("Q R")];
        let kd = assemble_kd(&c, &teacher).unwrap();
        assert_eq!(kd.pairs[1].source, split("c"));
        assert_eq!(kd.pairs[1].target, split("Q R"));
        assert!(assemble_kd(&c, &teacher[..1]).is_err());
        let bid = build_bidirectional(&kd).unwrap();
        assert_eq!(bid.len(), 4);
        assert_eq!(bid.pairs[3].source, split("Q R"));
    }

    #[test]
    fn dd_concatenates_and_dedups() {
        let c = corpus(&[("a", "A"), ("b", "B")]);
        assert_eq!(assemble_dd(&c, &c, &c).unwrap(), c);
        let x = corpus(&[("1", "1"), ("2", "2"), ("3", "3")]);
        let y = corpus(&[("4", "4"), ("5", "5"), ("6", "6"), ("7", "7")]);
        assert_eq!(assemble_dd(&c, &x, &y).unwrap().len(), 9);
        let kd = corpus(&[("a", "A"), ("z", "Z")]);
        let out = assemble_dd(&c, &kd, &y).unwrap();
        assert_eq!(out.len(), 2 + 1 + 4);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let pairs: Vec<_> = (0..100)
            .map(|i| SentencePair::parse(&format!("s{i}"), &format!("t{i}")).unwrap())
            .collect();
        let c = ParallelCorpus::new(pairs, "s", "t").unwrap();
        let s = split_corpus(&c, 10, 10, 4).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<_> = s.train.pairs.iter().chain(&s.valid.pairs).chain(&s.test.pairs).cloned().collect();
        all.sort_by_key(|p| p.source.clone());
        let mut orig = c.pairs.clone();
        orig.sort_by_key(|p| p.source.clone());
        assert_eq!(all, orig);
        assert_eq!(s, split_corpus(&c, 10, 10, 4).unwrap());
        assert!(split_corpus(&c, 50, 50, 4).is_err());
    }

    #[test]
    fn split_scaled_protocol() {
        let pairs: Vec<_> = (0..1000)
            .map(|i| SentencePair::parse(&format!("s{i}"), &format!("t{i}")).unwrap())
            .collect();
        let c = ParallelCorpus::new(pairs, "s", "t").unwrap();
        let s = split_corpus(&c, 50, 50, 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (900, 50, 50));
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let c = build_bidirectional(&corpus(&[("a b", "X Y"), ("c", "Z")])).unwrap();
        write_tsv(&path, &c).unwrap();
        assert_eq!(read_tsv(&path, "xx", "yy").unwrap(), c);
        fs::write(&path, "a\tb\nonly-one-field\n").unwrap();
        match read_tsv(&path, "x", "y") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parallel_files_and_dict() {
        let dir = tempfile::tempdir().unwrap();
        let (s, t, d) = (dir.path().join("s"), dir.path().join("t"), dir.path().join("d"));
        let c = corpus(&[("a b", "X Y"), ("c", "Z")]);
        write_parallel_files(&s, &t, &c).unwrap();
        assert_eq!(read_parallel_files(&s, &t, "xx", "yy").unwrap(), c);
        fs::write(&d, "a\tα\na\tά\nb\tβ\n").unwrap();
        let dict = read_alignment_dict(&d).unwrap();
        assert_eq!(dict.candidates("a").unwrap(), ["α", "ά"]);
        assert!(dict.candidates("A").is_none());
    }
}
