//! Analytic gradients against central finite differences in f64.

use bitrain_core::corpus::OriginTag;
use bitrain_core::model::{backward, Batch, EncodedPair, ModelConfig, ModelParams, Mode};
use bitrain_core::rng::SplitMix64;

use super::Outcome;

/// V=11, d=8, one encoder and two decoder layers.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 2,
        d_ffn: 16,
        dropout_rate: 0.1,
        max_positions: 32,
        init_seed: 7,
    }
}

fn toy_batch(rng: &mut SplitMix64) -> Batch {
    let pairs: Vec<EncodedPair> = (0..3)
        .map(|_| {
            let sl = 2 + rng.below(4) as usize;
            let tl = 1 + rng.below(4) as usize;
            let mut src: Vec<u32> = (0..sl).map(|_| 5 + rng.below(6) as u32).collect();
            src.push(2);
            let tgt = (0..tl).map(|_| 5 + rng.below(6) as u32).collect();
            EncodedPair {
                src,
                tgt,
                origin: OriginTag::Original,
            }
        })
        .collect();
    Batch::from_pairs(&pairs)
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-7)` on `n` sampled
/// coordinates; passes when at least 99% are below 1e-3.
pub fn run(mode: Mode, epsilon: f64, seed: u64, n: usize) -> Outcome {
    let params = ModelParams::<f64>::init(&tiny_config()).unwrap();
    let mut rng = SplitMix64::new(seed);
    let batch = toy_batch(&mut rng);
    let (_, grads) = backward(&params, &batch, epsilon, mode).unwrap();
    let h = 1e-4;
    let (mut good, mut worst) = (0, 0.0f64);
    let mut probe = params.clone();
    for _ in 0..n {
        let i = rng.below(params.num_params() as u64) as usize;
        let x = params.data[i];
        probe.data[i] = x + h;
        let up = backward(&probe, &batch, epsilon, mode).unwrap().0.mean();
        probe.data[i] = x - h;
        let down = backward(&probe, &batch, epsilon, mode).unwrap().0.mean();
        probe.data[i] = x;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.data[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
        if rel < 1e-3 {
            good += 1;
        }
    }
    Outcome::new(
        good * 100 >= 99 * n,
        format!("{good}/{n} coordinates within 1e-3 (worst {worst:.2e})"),
    )
}
