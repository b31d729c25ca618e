use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Summed token losses of a batch; `mean()` is what training minimizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    /// Label-smoothed loss, summed over non-pad tokens.
    pub smoothed_sum: f64,
    /// Plain negative log-likelihood, summed over non-pad tokens.
    pub nll_sum: f64,
    pub tokens: usize,
}

impl LossValue {
    pub fn mean(&self) -> f64 {
        self.smoothed_sum / self.tokens as f64
    }

    pub fn nll_mean(&self) -> f64 {
        self.nll_sum / self.tokens as f64
    }

    pub fn merge(&mut self, other: &LossValue) {
        self.smoothed_sum += other.smoothed_sum;
        self.nll_sum += other.nll_sum;
        self.tokens += other.tokens;
    }
}

/// `(1-ε)·NLL + ε·mean_v(-log p_v)` per non-pad position, accumulated in
/// double precision. `log_probs` is `[positions, vocab]`.
pub fn label_smoothed_loss<T: Real>(
    log_probs: &[T],
    vocab: usize,
    target: &[u32],
    mask: &[bool],
    epsilon: f64,
) -> Result<LossValue> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("label smoothing {epsilon} outside [0, 1)")));
    }
    if log_probs.len() != target.len() * vocab || mask.len() != target.len() {
        return Err(Error::invalid("loss inputs have inconsistent shapes"));
    }
    let mut out = LossValue::default();
    for (pos, (&y, &keep)) in target.iter().zip(mask).enumerate() {
        if !keep {
            continue;
        }
        let row = &log_probs[pos * vocab..(pos + 1) * vocab];
        let nll = -row[y as usize].f64();
        let mean_neg: f64 = -row.iter().map(|v| v.f64()).sum::<f64>() / vocab as f64;
        out.nll_sum += nll;
        out.smoothed_sum += (1.0 - epsilon) * nll + epsilon * mean_neg;
        out.tokens += 1;
    }
    if out.tokens == 0 {
        return Err(Error::invalid("loss over an all-pad batch"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_prediction_gives_log_v_for_any_epsilon() {
        let v = 8;
        let lp = vec![-(v as f64).ln(); 2 * v];
        for eps in [0.0, 0.1, 0.5] {
            let l = label_smoothed_loss(&lp, v, &[3, 5], &[true, true], eps).unwrap();
            assert!((l.mean() - (v as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn near_one_hot_matches_closed_form() {
        // p_y = 1 - 7δ, every other p = δ, V = 8, ε = 0.1
        let (v, eps, delta) = (8usize, 0.1f64, 1e-4f64);
        let mut lp = vec![delta.ln(); v];
        lp[2] = (1.0 - 7.0 * delta).ln();
        let l = label_smoothed_loss(&lp, v, &[2], &[true], eps).unwrap();
        let nll = -(1.0 - 7.0 * delta).ln();
        let want = (1.0 - eps) * nll + eps * (nll - 7.0 * delta.ln()) / 8.0;
        assert!((l.mean() - want).abs() < 1e-12);
    }

    #[test]
    fn pads_are_excluded_and_all_pad_rejected() {
        let lp = vec![-(4f64).ln(); 8];
        let l = label_smoothed_loss(&lp, 4, &[1, 0], &[true, false], 0.1).unwrap();
        assert_eq!(l.tokens, 1);
        assert!(label_smoothed_loss(&lp, 4, &[1, 0], &[false, false], 0.1).is_err());
        assert!(label_smoothed_loss(&lp, 4, &[1, 0], &[true, true], 1.0).is_err());
    }
}
