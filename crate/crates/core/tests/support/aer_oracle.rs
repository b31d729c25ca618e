//! Alignment error rate from explicit set arithmetic.

use std::collections::BTreeSet;

use bitrain_core::eval::{aer, corpus_aer, AlignmentSet, Link};
use bitrain_core::rng::SplitMix64;

use super::Outcome;

/// `(precision, recall, aer)` by walking the links one at a time.
pub fn expected(a: &[Link], s: &[Link], p: &[Link]) -> (f64, f64, f64) {
    let in_s = a.iter().filter(|l| s.contains(l)).count() as f64;
    let in_p = a.iter().filter(|l| p.contains(l) || s.contains(l)).count() as f64;
    let precision = if a.is_empty() { 0.0 } else { in_p / a.len() as f64 };
    let recall = in_s / s.len() as f64;
    (precision, recall, 1.0 - (in_s + in_p) / (a.len() + s.len()) as f64)
}

fn links(rng: &mut SplitMix64, src: usize, tgt: usize, density: f64) -> Vec<Link> {
    let mut out = Vec::new();
    for i in 0..src {
        for j in 0..tgt {
            if rng.bernoulli(density) {
                out.push((i, j));
            }
        }
    }
    out
}

fn set(v: &[Link]) -> BTreeSet<Link> {
    v.iter().copied().collect()
}

/// The small worked example, then `instances` random triples with a
/// non-empty sure set inside the possible set, then corpus pooling.
pub fn run(instances: usize) -> Outcome {
    let gold = AlignmentSet::new(set(&[(0, 0)]), set(&[(0, 0), (2, 1)]), 3, 2).unwrap();
    let got = aer(&set(&[(0, 0), (1, 1)]), &gold).unwrap();
    let worked = (got.precision - 0.5).abs().max((got.recall - 1.0).abs()).max((got.aer - 1.0 / 3.0).abs());
    if worked > 1e-12 {
        return Outcome::new(false, format!("worked example gave {got:?}"));
    }
    if aer(&set(&[(0, 0)]), &AlignmentSet::new(BTreeSet::new(), BTreeSet::new(), 1, 1).unwrap()).is_ok() {
        return Outcome::new(false, "empty sure set was accepted");
    }

    let mut rng = SplitMix64::new(9);
    let mut worst = 0.0f64;
    let mut predicted = Vec::new();
    let mut golds = Vec::new();
    let mut pooled = (0usize, 0usize, 0usize, 0usize);
    let mut made = 0;
    while made < instances {
        let (src, tgt) = (1 + rng.below(6) as usize, 1 + rng.below(6) as usize);
        let s = links(&mut rng, src, tgt, 0.25);
        if s.is_empty() {
            continue;
        }
        let mut p = s.clone();
        p.extend(links(&mut rng, src, tgt, 0.2).into_iter().filter(|l| !s.contains(l)));
        let a = links(&mut rng, src, tgt, [0.0, 0.2, 0.5][made % 3]);
        let gold = AlignmentSet::new(set(&s), set(&p), src, tgt).unwrap();
        let got = aer(&set(&a), &gold).unwrap();
        let (pr, rc, er) = expected(&a, &s, &p);
        worst = worst
            .max((got.precision - pr).abs())
            .max((got.recall - rc).abs())
            .max((got.aer - er).abs());
        pooled.0 += a.len();
        pooled.1 += s.len();
        pooled.2 += a.iter().filter(|l| s.contains(l)).count();
        pooled.3 += a.iter().filter(|l| p.contains(l)).count();
        predicted.push(set(&a));
        golds.push(gold);
        made += 1;
    }
    let corpus = corpus_aer(&predicted, &golds).unwrap();
    let want = 1.0 - (pooled.2 + pooled.3) as f64 / (pooled.0 + pooled.1) as f64;
    worst = worst.max((corpus.aer - want).abs());
    Outcome::new(worst <= 1e-12, format!("worked example and {instances} instances, max deviation {worst:.1e}"))
}
