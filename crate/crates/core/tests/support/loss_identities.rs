use bitrain_core::corpus::OriginTag;
use bitrain_core::model::{forward, label_smoothed_loss, Batch, EncodedPair, ModelConfig, ModelParams, Mode};
use bitrain_core::rng::SplitMix64;

use super::Outcome;

fn random_pairs(rng: &mut SplitMix64, vocab: u32, n: usize) -> Vec<EncodedPair> {
    (0..n)
        .map(|_| {
            let sl = 1 + rng.below(6) as usize;
            let tl = 1 + rng.below(6) as usize;
            let mut src: Vec<u32> = (0..sl).map(|_| 5 + rng.below(vocab as u64 - 5) as u32).collect();
            src.push(2);
            EncodedPair {
                src,
                tgt: (0..tl).map(|_| 5 + rng.below(vocab as u64 - 5) as u32).collect(),
                origin: OriginTag::Original,
            }
        })
        .collect()
}

fn config(vocab: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        d_model: 16,
        n_heads: 4,
        n_enc_layers: 2,
        n_dec_layers: 2,
        d_ffn: 32,
        dropout_rate: 0.1,
        max_positions: 32,
        init_seed: seed,
    }
}

/// Uniform predictions cost `ln V` whatever the smoothing, both for
/// hand-built uniform rows and for a model whose parameters are all zero.
pub fn uniform_is_log_v(trials: usize) -> Outcome {
    let mut rng = SplitMix64::new(11);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let vocab = 6 + rng.below(60) as usize;
        let eps = [0.0, 0.1, 0.3, 0.9][trial % 4];
        let positions = 1 + rng.below(20) as usize;
        let rows = vec![-(vocab as f64).ln(); positions * vocab];
        let target: Vec<u32> = (0..positions).map(|_| rng.below(vocab as u64) as u32).collect();
        let mut mask: Vec<bool> = (0..positions).map(|_| rng.bernoulli(0.8)).collect();
        mask[0] = true;
        let loss = label_smoothed_loss(&rows, vocab, &target, &mask, eps).unwrap();
        worst = worst.max((loss.mean() - (vocab as f64).ln()).abs());

        let zeros = ModelParams::<f64>::zeros(&config(vocab, 1)).unwrap();
        let pairs = random_pairs(&mut rng, vocab as u32, 3);
        let batch = Batch::from_pairs(&pairs);
        let out = forward(&zeros, &batch, Mode::Eval).unwrap();
        let loss = label_smoothed_loss(&out.log_probs, vocab, &batch.tgt_out, &batch.tgt_mask, eps).unwrap();
        worst = worst.max((loss.mean() - (vocab as f64).ln()).abs());
    }
    Outcome::new(worst <= 1e-9, format!("max |loss - ln V| = {worst:.1e}"))
}

/// With ε = 0 the loss is the exact NLL of an independently computed
/// log-softmax.
pub fn zero_smoothing_is_nll(trials: usize) -> Outcome {
    let mut rng = SplitMix64::new(12);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let vocab = 2 + rng.below(40) as usize;
        let positions = 1 + rng.below(20) as usize;
        let logits: Vec<f64> = (0..positions * vocab).map(|_| 8.0 * (rng.next_f64() - 0.5)).collect();
        let mut rows = vec![0.0; logits.len()];
        for p in 0..positions {
            let row = &logits[p * vocab..(p + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for v in 0..vocab {
                rows[p * vocab + v] = row[v] - lse;
            }
        }
        let target: Vec<u32> = (0..positions).map(|_| rng.below(vocab as u64) as u32).collect();
        let mut mask: Vec<bool> = (0..positions).map(|_| rng.bernoulli(0.7)).collect();
        mask[positions - 1] = true;
        let (mut nll, mut count) = (0.0, 0);
        for p in 0..positions {
            if mask[p] {
                nll -= rows[p * vocab + target[p] as usize];
                count += 1;
            }
        }
        let loss = label_smoothed_loss(&rows, vocab, &target, &mask, 0.0).unwrap();
        worst = worst.max((loss.mean() - nll / count as f64).abs());
        worst = worst.max((loss.smoothed_sum - loss.nll_sum).abs());
    }
    Outcome::new(worst <= 1e-9, format!("max |loss - NLL| = {worst:.1e}"))
}

/// Every attention row of a padded batch is a distribution over the real
/// keys: sums to 1 and puts exactly zero mass on padding.
pub fn attention_rows(trials: usize) -> Outcome {
    let mut rng = SplitMix64::new(13);
    let mut worst = 0.0f64;
    let mut leaked = 0.0f64;
    let mut rows = 0usize;
    for trial in 0..trials {
        let vocab = 20;
        let cfg = config(vocab, 100 + trial as u64);
        let params = ModelParams::<f32>::init(&cfg).unwrap();
        let pairs = random_pairs(&mut rng, vocab as u32, 4);
        let batch = Batch::from_pairs(&pairs);
        let mode = if trial % 2 == 0 { Mode::Eval } else { Mode::Train { dropout_seed: trial as u64 } };
        let out = forward(&params, &batch, mode).unwrap();
        let heads = cfg.n_heads;
        let (s, t) = (batch.src_len, batch.tgt_len);
        let mut check = |probs: &[f64], tq: usize, tk: usize, real_q: &dyn Fn(usize) -> usize, real_k: &dyn Fn(usize, usize) -> usize| {
            for (b, _) in pairs.iter().enumerate() {
                for h in 0..heads {
                    for i in 0..real_q(b) {
                        let row = &probs[((b * heads + h) * tq + i) * tk..][..tk];
                        let k = real_k(b, i);
                        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                        leaked = leaked.max(row[k..].iter().fold(0.0f64, |m, v| m.max(v.abs())));
                        rows += 1;
                    }
                }
            }
        };
        for layer in out.encoder_self_attention() {
            check(&layer, s, s, &|b| pairs[b].src_len(), &|b, _| pairs[b].src_len());
        }
        for layer in out.decoder_cross_attention() {
            check(&layer, t, s, &|b| pairs[b].tgt_len(), &|b, _| pairs[b].src_len());
        }
        for b in 0..pairs.len() {
            for layer in out.attention(b).layers {
                for head in layer {
                    for row in head {
                        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                    }
                }
            }
        }
    }
    Outcome::new(
        worst <= 1e-6 && leaked == 0.0,
        format!("{rows} rows, max |sum - 1| = {worst:.1e}, max padded mass = {leaked:.1e}"),
    )
}
