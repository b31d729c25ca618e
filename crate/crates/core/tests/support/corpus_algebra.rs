use bitrain_core::corpus::{
    assemble_dd, build_bidirectional, split_corpus, swap_pair, OriginTag, ParallelCorpus, SentencePair,
};
use bitrain_core::rng::SplitMix64;

use super::Outcome;

const WORDS: [&str; 6] = ["a", "b", "c", "xy", "z", "q"];

fn sentence(rng: &mut SplitMix64) -> Vec<String> {
    let n = 1 + rng.below(4) as usize;
    (0..n).map(|_| WORDS[rng.below(WORDS.len() as u64) as usize].to_string()).collect()
}

/// Random corpus with deliberate duplicates and a mix of tags.
pub fn random_corpus(rng: &mut SplitMix64, max_pairs: u64) -> ParallelCorpus {
    let n = 1 + rng.below(max_pairs) as usize;
    let tags = [OriginTag::Original, OriginTag::Swapped, OriginTag::Distilled];
    let mut pairs: Vec<SentencePair> = Vec::with_capacity(n);
    for _ in 0..n {
        if !pairs.is_empty() && rng.bernoulli(0.2) {
            let again = pairs[rng.below(pairs.len() as u64) as usize].clone();
            pairs.push(again);
            continue;
        }
        let tag = tags[rng.below(3) as usize];
        pairs.push(SentencePair::new(sentence(rng), sentence(rng), tag).unwrap());
    }
    ParallelCorpus::new(pairs, "en", "de").unwrap()
}

/// First occurrence of every (source, target) text, by plain scanning.
fn dedup_oracle(all: &[SentencePair]) -> Vec<SentencePair> {
    let mut out: Vec<SentencePair> = Vec::new();
    for p in all {
        if !out.iter().any(|q| q.source == p.source && q.target == p.target) {
            out.push(p.clone());
        }
    }
    out
}

/// Checks one corpus; `Err` names the first broken law.
pub fn check_case(c: &ParallelCorpus, rng: &mut SplitMix64) -> Result<(), String> {
    let n = c.len();
    let bid = build_bidirectional(c).map_err(|e| e.to_string())?;
    if bid.len() != 2 * n {
        return Err(format!("|bid| = {} for |c| = {n}", bid.len()));
    }
    for (i, p) in c.pairs.iter().enumerate() {
        if swap_pair(&swap_pair(p)) != *p {
            return Err(format!("swap is not an involution on pair {i}"));
        }
        if bid.pairs[i] != *p {
            return Err(format!("first half differs at {i}"));
        }
        let s = &bid.pairs[n + i];
        if s.source != p.target || s.target != p.source || s.origin != p.origin.swapped() {
            return Err(format!("second half is not the swap at {i}"));
        }
    }
    if bid.source_lang != c.source_lang || bid.target_lang != c.target_lang {
        return Err("doubling changed the language labels".into());
    }

    let other = random_corpus(rng, 8);
    let third = random_corpus(rng, 8);
    let dd = assemble_dd(c, &other, &third).map_err(|e| e.to_string())?;
    let all: Vec<SentencePair> = c.pairs.iter().chain(&other.pairs).chain(&third.pairs).cloned().collect();
    if dd.pairs != dedup_oracle(&all) {
        return Err("dedup disagrees with first-occurrence scan".into());
    }
    if dd != assemble_dd(c, &other, &third).unwrap() {
        return Err("dedup is not deterministic".into());
    }

    if n >= 3 {
        let n_valid = 1 + rng.below((n as u64 - 1) / 2) as usize;
        let n_test = 1 + rng.below((n - n_valid - 1) as u64) as usize;
        let seed = rng.next_u64();
        let a = split_corpus(c, n_valid, n_test, seed).map_err(|e| e.to_string())?;
        let b = split_corpus(c, n_valid, n_test, seed).map_err(|e| e.to_string())?;
        if a != b {
            return Err("split is not deterministic".into());
        }
        if a.valid.len() != n_valid || a.test.len() != n_test || a.train.len() != n - n_valid - n_test {
            return Err("split sizes are wrong".into());
        }
        // Each split keeps corpus order, and together they hold the corpus
        // as a multiset.
        let mut pooled: Vec<String> = Vec::new();
        for part in [&a.train, &a.valid, &a.test] {
            let mut rest = c.pairs.iter();
            for p in &part.pairs {
                if !rest.any(|q| q == p) {
                    return Err("split part is not an ordered subsequence".into());
                }
                pooled.push(format!("{p:?}"));
            }
        }
        let mut all: Vec<String> = c.pairs.iter().map(|p| format!("{p:?}")).collect();
        all.sort();
        pooled.sort();
        if all != pooled {
            return Err("splits are not a partition of the corpus".into());
        }
    }
    Ok(())
}

/// `cases` random corpora under each seed.
pub fn run(cases: usize, seeds: &[u64]) -> Outcome {
    let mut total = 0;
    for &seed in seeds {
        let mut rng = SplitMix64::new(seed);
        for case in 0..cases {
            let c = random_corpus(&mut rng, 24);
            if let Err(e) = check_case(&c, &mut rng) {
                return Outcome::new(false, format!("seed {seed} case {case}: {e}"));
            }
            total += 1;
        }
    }
    Outcome::new(true, format!("{total} randomized corpora"))
}
