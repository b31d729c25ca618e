//! BLEU recomputed by position scanning: the k-th occurrence of an n-gram
//! in the hypothesis matches when the reference holds at least k copies.

use bitrain_core::eval::corpus_bleu;
use bitrain_core::rng::SplitMix64;

use super::Outcome;

fn occurrences(tokens: &[String], gram: &[String], upto: usize) -> usize {
    (0..upto)
        .filter(|&j| j + gram.len() <= tokens.len() && tokens[j..j + gram.len()] == *gram)
        .count()
}

pub struct Expected {
    pub bleu: f64,
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub brevity_penalty: f64,
}

pub fn expected(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Expected {
    let mut matches = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            if h.len() < n {
                continue;
            }
            for i in 0..=h.len() - n {
                let gram = &h[i..i + n];
                totals[n - 1] += 1;
                let k = occurrences(h, gram, i + 1);
                if k <= occurrences(rf, gram, rf.len()) {
                    matches[n - 1] += 1;
                }
            }
        }
    }
    let brevity_penalty = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut product = 1.0f64;
    for n in 0..max_n {
        product *= if totals[n] == 0 { 0.0 } else { matches[n] as f64 / totals[n] as f64 };
    }
    Expected {
        bleu: 100.0 * brevity_penalty * product.powf(1.0 / max_n as f64),
        matches,
        totals,
        brevity_penalty,
    }
}

fn sentence(rng: &mut SplitMix64, words: &[&str]) -> Vec<String> {
    let n = rng.below(9) as usize;
    (0..n).map(|_| words[rng.below(words.len() as u64) as usize].to_string()).collect()
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// The repeated-word example from the usual BLEU description, then
/// `corpora` random corpora over small vocabularies so that repeated
/// n-grams and clipping are common.
pub fn run(corpora: usize) -> Outcome {
    let hyp = vec![split("the the the the the the the")];
    let rf = vec![split("the cat is on the mat")];
    let got = corpus_bleu(&hyp, &rf, 4).unwrap();
    if got.matches[0] != 2 || got.totals[0] != 7 || (got.precisions[0] - 2.0 / 7.0).abs() > 1e-12 {
        return Outcome::new(false, format!("unigram precision {}/{}", got.matches[0], got.totals[0]));
    }

    let mut rng = SplitMix64::new(4);
    let mut worst = 0.0f64;
    let mut nonzero = 0;
    for case in 0..corpora {
        let words: &[&str] = if case % 2 == 0 { &["a", "b"] } else { &["a", "b", "c", "d", "e"] };
        let m = 1 + rng.below(6) as usize;
        let refs: Vec<Vec<String>> = (0..m).map(|_| sentence(&mut rng, words)).collect();
        let hyps: Vec<Vec<String>> = refs
            .iter()
            .map(|r| if rng.bernoulli(0.3) { r.clone() } else { sentence(&mut rng, words) })
            .collect();
        let max_n = 1 + rng.below(4) as usize;
        let got = corpus_bleu(&hyps, &refs, max_n).unwrap();
        let want = expected(&hyps, &refs, max_n);
        if got.matches != want.matches || got.totals != want.totals {
            return Outcome::new(false, format!("case {case}: counts {:?}/{:?} vs {:?}/{:?}", got.matches, got.totals, want.matches, want.totals));
        }
        worst = worst
            .max((got.bleu - want.bleu).abs())
            .max((got.brevity_penalty - want.brevity_penalty).abs());
        if want.bleu > 0.0 {
            nonzero += 1;
        }
    }
    Outcome::new(
        worst <= 1e-9,
        format!("2/7 example and {corpora} corpora ({nonzero} with nonzero BLEU), max deviation {worst:.1e}"),
    )
}
