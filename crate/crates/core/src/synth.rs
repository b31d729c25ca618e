//! Seeded toy translation tasks with a known answer.
//!
//! Source words are `s<k>`, target words `t<k>`. Every source word has one
//! target translation fixed by a lexicon permutation, and the translated
//! sentence is then reordered by a position rule. With zero noise the task
//! is a deterministic bijection in both directions.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{OriginTag, ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::eval::AlignmentSet;
use crate::rng::{label, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Reordering {
    Identity,
    Reverse,
    /// Target position `j` holds source position `(j + k) mod n`.
    Rotate(usize),
}

impl Reordering {
    /// Source position feeding target position `j` in a sentence of `n`.
    pub fn source_of(self, j: usize, n: usize) -> usize {
        match self {
            Reordering::Identity => j,
            Reordering::Reverse => n - 1 - j,
            Reordering::Rotate(k) => (j + k) % n,
        }
    }
}

impl fmt::Display for Reordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reordering::Identity => f.write_str("identity"),
            Reordering::Reverse => f.write_str("reverse"),
            Reordering::Rotate(k) => write!(f, "rotate-{k}"),
        }
    }
}

impl FromStr for Reordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "reverse" => Ok(Self::Reverse),
            _ => s
                .strip_prefix("rotate-")
                .and_then(|k| k.parse().ok())
                .map(Self::Rotate)
                .ok_or_else(|| Error::invalid(format!("unknown reordering {s:?} (identity, reverse or rotate-K)"))),
        }
    }
}

impl From<Reordering> for String {
    fn from(r: Reordering) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for Reordering {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub lexicon_seed: u64,
    pub reordering: Reordering,
    pub min_len: usize,
    pub max_len: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Per-token probability of replacing a target word with a random
    /// different one.
    pub noise: f64,
}

impl Default for SynthSpec {
    /// 64 words per side, reversed order, lengths 3..=10, 2000/200/200.
    fn default() -> Self {
        Self {
            src_vocab: 64,
            tgt_vocab: 64,
            lexicon_seed: 0,
            reordering: Reordering::Reverse,
            min_len: 3,
            max_len: 10,
            n_train: 2000,
            n_valid: 200,
            n_test: 200,
            noise: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.src_vocab == 0 {
            return Err(Error::invalid("source vocabulary must be non-empty"));
        }
        if self.tgt_vocab < self.src_vocab {
            return Err(Error::invalid(format!(
                "target vocabulary of {} cannot hold a one-to-one lexicon for {} source words",
                self.tgt_vocab, self.src_vocab
            )));
        }
        if self.noise > 0.0 && self.tgt_vocab < 2 {
            return Err(Error::invalid("noise needs at least two target words"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid("sentence lengths must satisfy 1 <= min_len <= max_len"));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::invalid("noise rate must lie in [0, 0.5)"));
        }
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(Error::invalid("every split needs at least one sentence"));
        }
        let needed = (self.n_train + self.n_valid + self.n_test) as f64;
        let available: f64 = (self.min_len..=self.max_len)
            .map(|n| (self.src_vocab as f64).powi(n as i32))
            .sum();
        if available < 2.0 * needed {
            return Err(Error::invalid(format!(
                "only {available} distinct sentences for {needed} requested; widen lengths or vocabulary"
            )));
        }
        Ok(())
    }

    /// `lexicon()[k]` is the target word index for source word `k`.
    pub fn lexicon(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.tgt_vocab).collect();
        SplitMix64::from_labels(self.lexicon_seed, &[label("lexicon")]).shuffle(&mut perm);
        perm.truncate(self.src_vocab);
        perm
    }
}

pub fn source_word(k: usize) -> String {
    format!("s{k}")
}

pub fn target_word(k: usize) -> String {
    format!("t{k}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
    /// Gold word alignment of every test pair; sure and possible links
    /// coincide.
    pub test_alignments: Vec<AlignmentSet>,
}

/// Draws distinct source sentences for all splits, translates them through
/// the lexicon and the reordering rule, then applies substitution noise.
pub fn generate_task(spec: &SynthSpec, seed: u64) -> Result<SynthTask> {
    spec.validate()?;
    let lexicon = spec.lexicon();
    let mut rng = SplitMix64::from_labels(seed, &[label("synth")]);
    let total = spec.n_train + spec.n_valid + spec.n_test;
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(total);
    let mut sources = Vec::with_capacity(total);
    let span = (spec.max_len - spec.min_len + 1) as u64;
    while sources.len() < total {
        let n = spec.min_len + rng.below(span) as usize;
        let s: Vec<usize> = (0..n).map(|_| rng.below(spec.src_vocab as u64) as usize).collect();
        if seen.insert(s.clone()) {
            sources.push(s);
        }
    }

    let mut pairs = Vec::with_capacity(total);
    let mut alignments = Vec::with_capacity(total);
    for src in &sources {
        let n = src.len();
        let mut tgt = Vec::with_capacity(n);
        let mut links = BTreeSet::new();
        for j in 0..n {
            let i = spec.reordering.source_of(j, n);
            let mut word = lexicon[src[i]];
            if spec.noise > 0.0 && rng.bernoulli(spec.noise) {
                let other = rng.below(spec.tgt_vocab as u64 - 1) as usize;
                word = if other >= word { other + 1 } else { other };
            }
            tgt.push(target_word(word));
            links.insert((i, j));
        }
        let source: Vec<String> = src.iter().map(|&k| source_word(k)).collect();
        pairs.push(SentencePair::new(source, tgt, OriginTag::Original)?);
        alignments.push(AlignmentSet::new(links.clone(), links, n, n)?);
    }

    let corpus = |range: std::ops::Range<usize>| ParallelCorpus::new(pairs[range].to_vec(), "src", "tgt");
    let (a, b) = (spec.n_train, spec.n_train + spec.n_valid);
    Ok(SynthTask {
        train: corpus(0..a)?,
        valid: corpus(a..b)?,
        test: corpus(b..total)?,
        test_alignments: alignments[b..].to_vec(),
    })
}

/// BLEU a perfect translator achieves. Only defined for noiseless tasks,
/// where every source has exactly one correct output.
pub fn oracle_bleu_bound(spec: &SynthSpec) -> Result<f64> {
    spec.validate()?;
    if spec.noise > 0.0 {
        return Err(Error::invalid("no closed-form BLEU bound for noisy tasks"));
    }
    Ok(100.0)
}
