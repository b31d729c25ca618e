//! Tokenized BLEU, the paired sign test and alignment quality.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_file, ParallelCorpus};
use crate::error::{Error, Result};
use crate::tokenizer::END_OF_WORD;

// ------------------------------------------------------------------- BLEU

/// Corpus-level BLEU with its components. `bleu` is a percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub bleu: f64,
    /// Clipped modified n-gram precisions, n = 1..=max_n.
    pub precisions: Vec<f64>,
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    counts
}

/// Clipped matches and hypothesis n-gram count for one sentence.
fn clipped<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> (u64, u64) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, hyp.len().saturating_sub(n - 1) as u64)
}

fn check_pairing(hyps: usize, refs: usize) -> Result<()> {
    if hyps == 0 {
        return Err(Error::invalid("no hypotheses to score"));
    }
    if hyps != refs {
        return Err(Error::invalid(format!("{hyps} hypotheses but {refs} references")));
    }
    Ok(())
}

/// Geometric mean of clipped n-gram precisions times the brevity penalty,
/// one reference per sentence, no smoothing.
pub fn corpus_bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], max_n: usize) -> Result<BleuScore> {
    check_pairing(hyps.len(), refs.len())?;
    if max_n == 0 {
        return Err(Error::invalid("max_n must be at least 1"));
    }
    let mut matches = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
        for n in 1..=max_n {
            let (m, t) = clipped(h, r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    let precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let brevity_penalty = brevity_penalty(hyp_len, ref_len);
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Sentence BLEU for paired comparisons: add-one smoothing on the n ≥ 2
/// precisions keeps short sentences from scoring zero.
pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], reference: &[S], max_n: usize) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = clipped(hyp, reference, n);
        let p = if n == 1 {
            m as f64 / t as f64
        } else {
            (m + 1) as f64 / (t + 1) as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    100.0 * brevity_penalty(hyp.len() as u64, reference.len() as u64) * (log_sum / max_n as f64).exp()
}

// -------------------------------------------------------------- sign test

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    /// Two-sided exact binomial p-value.
    pub p_value: f64,
}

/// `P(X <= k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_lower_tail(n: u64, k: u64) -> f64 {
    let k = k.min(n);
    if n <= 62 {
        // Exact integer sums; only the final division rounds.
        let mut c: u128 = 1;
        let mut sum: u128 = 0;
        for i in 0..=k {
            sum += c;
            c = c * (n - i) as u128 / (i + 1) as u128;
        }
        sum as f64 / 2f64.powi(n as i32)
    } else {
        let ln2 = std::f64::consts::LN_2;
        let mut ln_c = 0.0f64;
        let terms: Vec<f64> = (0..=k)
            .map(|i| {
                let t = ln_c - n as f64 * ln2;
                ln_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
                t
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()).exp()
    }
}

pub fn sign_test_counts(wins: u64, losses: u64) -> Result<f64> {
    let n = wins + losses;
    if n == 0 {
        return Err(Error::invalid("sign test needs at least one non-tied pair"));
    }
    Ok((2.0 * binomial_lower_tail(n, wins.min(losses))).min(1.0))
}

/// Paired sign test over per-sentence scores; ties are discarded.
pub fn sign_test(scores_a: &[f64], scores_b: &[f64]) -> Result<SignTest> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::invalid(format!(
            "{} scores against {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (a, b) in scores_a.iter().zip(scores_b) {
        match a.partial_cmp(b) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            Some(std::cmp::Ordering::Equal) => ties += 1,
            None => return Err(Error::invalid("sign test scores must not be NaN")),
        }
    }
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value: sign_test_counts(wins, losses)?,
    })
}

// -------------------------------------------------------------- alignment

/// `(source index, target index)`, 0-based.
pub type Link = (usize, usize);

/// Gold links of one sentence pair. `possible` contains `sure`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSet {
    pub sure: BTreeSet<Link>,
    pub possible: BTreeSet<Link>,
    pub src_len: usize,
    pub tgt_len: usize,
}

impl AlignmentSet {
    pub fn new(sure: BTreeSet<Link>, mut possible: BTreeSet<Link>, src_len: usize, tgt_len: usize) -> Result<Self> {
        possible.extend(sure.iter().copied());
        if let Some(&(s, t)) = possible.iter().find(|&&(s, t)| s >= src_len || t >= tgt_len) {
            return Err(Error::invalid(format!(
                "link {s}-{t} outside a {src_len}x{tgt_len} sentence pair"
            )));
        }
        Ok(Self {
            sure,
            possible,
            src_len,
            tgt_len,
        })
    }

    /// Source and target sides exchanged.
    pub fn transposed(&self) -> Self {
        let flip = |set: &BTreeSet<Link>| set.iter().map(|&(s, t)| (t, s)).collect();
        Self {
            sure: flip(&self.sure),
            possible: flip(&self.possible),
            src_len: self.tgt_len,
            tgt_len: self.src_len,
        }
    }

    /// Pharaoh line: `i-j` for sure links, `i?j` for possible-only links,
    /// 1-based.
    pub fn to_pharaoh(&self) -> String {
        let mut items: Vec<(Link, bool)> = self
            .possible
            .iter()
            .map(|&l| (l, self.sure.contains(&l)))
            .collect();
        items.sort();
        items
            .iter()
            .map(|&((s, t), sure)| format!("{}{}{}", s + 1, if sure { '-' } else { '?' }, t + 1))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_pharaoh(line: &str, src_len: usize, tgt_len: usize) -> Result<Self> {
        let mut sure = BTreeSet::new();
        let mut possible = BTreeSet::new();
        for item in line.split_whitespace() {
            let (sep, set) = if item.contains('-') {
                ('-', &mut sure)
            } else {
                ('?', &mut possible)
            };
            let parsed = item.split_once(sep).and_then(|(a, b)| {
                let a: usize = a.parse().ok()?;
                let b: usize = b.parse().ok()?;
                (a >= 1 && b >= 1).then(|| (a - 1, b - 1))
            });
            let link = parsed.ok_or_else(|| Error::invalid(format!("bad alignment link {item:?}")))?;
            set.insert(link);
        }
        Self::new(sure, possible, src_len, tgt_len)
    }
}

/// One line per sentence pair of `corpus`; indices are checked against
/// the sentence lengths.
pub fn read_alignments(path: &Path, corpus: &ParallelCorpus) -> Result<Vec<AlignmentSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != corpus.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: lines.len(),
            msg: format!("{} alignment lines for {} sentence pairs", lines.len(), corpus.len()),
        });
    }
    lines
        .iter()
        .zip(&corpus.pairs)
        .enumerate()
        .map(|(i, (line, pair))| {
            AlignmentSet::parse_pharaoh(line, pair.source.len(), pair.target.len()).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_alignments(path: &Path, sets: &[AlignmentSet]) -> Result<()> {
    let text: String = sets.iter().map(|s| s.to_pharaoh() + "\n").collect();
    write_file(path, text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScores {
    pub aer: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Intersection sizes summed over a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlignmentCounts {
    pub predicted: usize,
    pub sure: usize,
    pub hit_sure: usize,
    pub hit_possible: usize,
}

impl AlignmentCounts {
    pub fn of(links: &BTreeSet<Link>, gold: &AlignmentSet) -> Self {
        Self {
            predicted: links.len(),
            sure: gold.sure.len(),
            hit_sure: links.intersection(&gold.sure).count(),
            hit_possible: links.intersection(&gold.possible).count(),
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.predicted += other.predicted;
        self.sure += other.sure;
        self.hit_sure += other.hit_sure;
        self.hit_possible += other.hit_possible;
    }

    /// An empty prediction has precision 0.
    pub fn scores(&self) -> Result<AlignmentScores> {
        if self.sure == 0 {
            return Err(Error::invalid("gold alignment has no sure links"));
        }
        let precision = if self.predicted == 0 {
            0.0
        } else {
            self.hit_possible as f64 / self.predicted as f64
        };
        Ok(AlignmentScores {
            aer: 1.0 - (self.hit_sure + self.hit_possible) as f64 / (self.predicted + self.sure) as f64,
            precision,
            recall: self.hit_sure as f64 / self.sure as f64,
        })
    }
}

pub fn aer(links: &BTreeSet<Link>, gold: &AlignmentSet) -> Result<AlignmentScores> {
    AlignmentCounts::of(links, gold).scores()
}

/// Corpus-level scores from summed counts.
pub fn corpus_aer(links: &[BTreeSet<Link>], gold: &[AlignmentSet]) -> Result<AlignmentScores> {
    if links.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predicted alignments for {} gold ones",
            links.len(),
            gold.len()
        )));
    }
    let mut total = AlignmentCounts::default();
    for (l, g) in links.iter().zip(gold) {
        total.add(&AlignmentCounts::of(l, g));
    }
    total.scores()
}

/// Each target row links to its highest-weight source column, lowest index
/// on ties.
pub fn attention_to_alignment(matrix: &[Vec<f64>], src_len: usize, tgt_len: usize) -> Result<BTreeSet<Link>> {
    if matrix.len() != tgt_len || matrix.iter().any(|r| r.len() != src_len) {
        return Err(Error::invalid(format!(
            "attention matrix is not {tgt_len}x{src_len}"
        )));
    }
    if src_len == 0 {
        return Ok(BTreeSet::new());
    }
    Ok(matrix
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let best = (1..row.len()).fold(0, |b, s| if row[s] > row[b] { s } else { b });
            (best, t)
        })
        .collect())
}

/// Keeps the rows of `tgt_keep` and columns of `src_keep` and renormalizes
/// each row. Used to drop the `<eos>` row and reserved source columns.
pub fn strip_attention(matrix: &[Vec<f64>], src_keep: &[bool], tgt_keep: &[bool]) -> Result<Vec<Vec<f64>>> {
    if matrix.len() != tgt_keep.len() || matrix.iter().any(|r| r.len() != src_keep.len()) {
        return Err(Error::invalid("keep masks do not match the attention matrix"));
    }
    Ok(matrix
        .iter()
        .zip(tgt_keep)
        .filter(|(_, &k)| k)
        .map(|(row, _)| {
            let kept: Vec<f64> = row.iter().zip(src_keep).filter(|(_, &k)| k).map(|(&v, _)| v).collect();
            let sum: f64 = kept.iter().sum();
            if sum > 0.0 {
                kept.iter().map(|v| v / sum).collect()
            } else {
                kept
            }
        })
        .collect())
}

/// Word index of every subword. A word ends at a token carrying the
/// end-of-word marker; without any marker every token is a word.
pub fn word_index<S: AsRef<str>>(tokens: &[S]) -> Vec<usize> {
    let marked = tokens.iter().any(|t| t.as_ref().ends_with(END_OF_WORD));
    let mut word = 0;
    tokens
        .iter()
        .map(|t| {
            let w = word;
            if !marked || t.as_ref().ends_with(END_OF_WORD) {
                word += 1;
            }
            w
        })
        .collect()
}

/// Subword links lifted to links between the words that own them.
pub fn project_to_words(links: &BTreeSet<Link>, src_words: &[usize], tgt_words: &[usize]) -> BTreeSet<Link> {
    links.iter().map(|&(s, t)| (src_words[s], tgt_words[t])).collect()
}

// ----------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent, rounded to one decimal.
    pub bleu: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_test: Option<SignTest>,
}

impl EvalReport {
    pub fn from_bleu(b: &BleuScore) -> Self {
        Self {
            bleu: (b.bleu * 10.0).round() / 10.0,
            precisions: b.precisions.clone(),
            brevity_penalty: b.brevity_penalty,
            hyp_len: b.hyp_len,
            ref_len: b.ref_len,
            alignment: None,
            sign_test: None,
        }
    }

    /// One human-readable line: BLEU, the n-gram precisions and BP.
    pub fn summary(&self) -> String {
        let precisions: Vec<String> = self.precisions.iter().map(|p| format!("{:.1}", 100.0 * p)).collect();
        format!(
            "BLEU = {:.1}, {} (BP = {:.3}, hyp_len = {}, ref_len = {})",
            self.bleu,
            precisions.join("/"),
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len
        )
    }
}
