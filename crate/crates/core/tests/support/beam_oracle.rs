//! Beam search against a hypothesis table built by exhaustive enumeration.
//!
//! Every prefix of the decoding tree is scored with a full teacher-forced
//! forward pass (not the incremental decoder). A width-limited search over
//! that table must reproduce `beam_decode` exactly, and when the width
//! covers the tree the result must be the global optimum.

use std::cmp::Ordering;
use std::collections::HashMap;

use bitrain_core::corpus::OriginTag;
use bitrain_core::decode::{beam_decode, BeamConfig};
use bitrain_core::model::{forward, Batch, EncodedPair, ModelConfig, ModelParams, Mode};
use bitrain_core::rng::SplitMix64;

use super::Outcome;

const EOS: u32 = 2;
/// Ids below this are `<pad>` and `<bos>`, which are never generated.
const FIRST_EMITTABLE: u32 = 2;

pub fn toy_model(vocab: usize, seed: u64) -> ModelParams<f64> {
    let cfg = ModelConfig {
        vocab_size: vocab,
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 2,
        d_ffn: 16,
        dropout_rate: 0.1,
        max_positions: 16,
        init_seed: seed,
    };
    let mut params = ModelParams::<f64>::init(&cfg).unwrap();
    // Sharper distributions than the default initialization.
    let scale = 1.0 + 3.0 * SplitMix64::new(seed ^ 0x5eed).next_f64();
    for x in params.data.iter_mut() {
        *x *= scale;
    }
    params
}

/// Next-token log-probabilities after every unfinished prefix shorter than
/// `max_len`.
pub fn enumerate(params: &ModelParams<f64>, source: &[u32], max_len: usize) -> HashMap<Vec<u32>, Vec<f64>> {
    let vocab = params.config.vocab_size as u32;
    let mut table = HashMap::new();
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in frontier {
            let pair = EncodedPair {
                src: source.to_vec(),
                tgt: prefix.clone(),
                origin: OriginTag::Original,
            };
            let out = forward(params, &Batch::from_pairs([&pair]), Mode::Eval).unwrap();
            let row = out.log_probs_at(0, prefix.len()).to_vec();
            for id in FIRST_EMITTABLE..vocab {
                if id != EOS {
                    let mut p = prefix.clone();
                    p.push(id);
                    next.push(p);
                }
            }
            table.insert(prefix, row);
        }
        frontier = next;
    }
    table
}

fn order(a: &(Vec<u32>, f64), b: &(Vec<u32>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn normalized(h: &(Vec<u32>, f64), alpha: f64) -> (Vec<u32>, f64) {
    (h.0.clone(), h.1 / (h.0.len() as f64).powf(alpha))
}

/// Width-limited search over the table: finished hypotheses keep their
/// slots, and hypotheses reaching `max_len` are closed.
pub fn table_beam(table: &HashMap<Vec<u32>, Vec<f64>>, vocab: u32, width: usize, max_len: usize, alpha: f64) -> (Vec<u32>, f64) {
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut done: Vec<(Vec<u32>, f64)> = Vec::new();
    for step in 0..max_len {
        let mut cands = Vec::new();
        for (prefix, score) in &live {
            let row = &table[prefix];
            for id in FIRST_EMITTABLE..vocab {
                let mut p = prefix.clone();
                p.push(id);
                cands.push((p, score + row[id as usize]));
            }
        }
        cands.sort_by(order);
        cands.truncate(width - done.len());
        live.clear();
        for c in cands {
            if c.0.last() == Some(&EOS) || step + 1 == max_len {
                done.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    let best = done
        .iter()
        .map(|h| normalized(h, alpha))
        .min_by(order)
        .expect("search finishes something");
    let raw = done.iter().find(|h| h.0 == best.0).unwrap().1;
    (best.0, raw)
}

/// Best complete hypothesis of the whole tree.
pub fn global_best(table: &HashMap<Vec<u32>, Vec<f64>>, vocab: u32, max_len: usize, alpha: f64) -> (Vec<u32>, f64) {
    let mut complete = Vec::new();
    for (prefix, row) in table {
        let base: f64 = prefix_score(table, prefix);
        for id in FIRST_EMITTABLE..vocab {
            if id == EOS || prefix.len() + 1 == max_len {
                let mut p = prefix.clone();
                p.push(id);
                complete.push((p, base + row[id as usize]));
            }
        }
    }
    let best = complete.iter().map(|h| normalized(h, alpha)).min_by(order).unwrap();
    let raw = complete.iter().find(|h| h.0 == best.0).unwrap().1;
    (best.0, raw)
}

fn prefix_score(table: &HashMap<Vec<u32>, Vec<f64>>, prefix: &[u32]) -> f64 {
    (0..prefix.len()).map(|i| table[&prefix[..i]][prefix[i] as usize]).sum()
}

/// `draws` random toy models. Each draw checks beam 2 against the table
/// search on a 5-id model for 1, 2 and 3 decode steps, and against the
/// global optimum on a 4-id model with 2 steps, where width 2 covers
/// every surviving branch.
pub fn run(draws: usize) -> Outcome {
    let mut rng = SplitMix64::new(77);
    let mut compared = 0;
    let mut global_hits = 0;
    let mut pruned_compares = 0;
    for draw in 0..draws {
        for steps in 1..=3usize {
            let params = toy_model(5, 1000 + draw as u64 * 7 + steps as u64);
            let source = [3 + rng.below(2) as u32, EOS];
            let alpha = [0.0, 0.6, 1.0][rng.below(3) as usize];
            let beam = BeamConfig {
                beam_size: 2,
                length_penalty: alpha,
                max_len_factor: steps as f64 / 2.0,
            };
            let max_len = beam.max_len(source.len(), params.config.max_positions);
            assert_eq!(max_len, steps);
            let table = enumerate(&params, &source, max_len);
            let got = beam_decode(&params, &source, &beam).unwrap().best;
            let want = table_beam(&table, 5, 2, max_len, alpha);
            if got.tokens != want.0 || (got.score - want.1).abs() > 1e-9 {
                return Outcome::new(
                    false,
                    format!("draw {draw}, {steps} steps: beam {:?} ({}) vs table {:?} ({})", got.tokens, got.score, want.0, want.1),
                );
            }
            compared += 1;
            pruned_compares += 1;
            if global_best(&table, 5, max_len, alpha).0 == got.tokens {
                global_hits += 1;
            }
        }

        let params = toy_model(4, 5000 + draw as u64);
        let source = [3, EOS];
        let beam = BeamConfig {
            beam_size: 2,
            length_penalty: 1.0,
            max_len_factor: 1.0,
        };
        let table = enumerate(&params, &source, 2);
        let got = beam_decode(&params, &source, &beam).unwrap().best;
        let want = global_best(&table, 4, 2, 1.0);
        if got.tokens != want.0 || (got.score - want.1).abs() > 1e-9 {
            return Outcome::new(
                false,
                format!("draw {draw}: beam {:?} misses the global optimum {:?}", got.tokens, want.0),
            );
        }
        compared += 1;
    }
    Outcome::new(
        true,
        format!(
            "{compared} searches match enumeration ({global_hits}/{pruned_compares} width-limited ones also hit the global optimum)"
        ),
    )
}
