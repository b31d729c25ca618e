use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Cross-attention of one sentence: `layers[l][h][t][s]`, target positions
/// by source positions, each row a distribution over real source positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub layers: Vec<Vec<Vec<Vec<f64>>>>,
}

impl AttentionRecord {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Head-averaged cross-attention of the penultimate decoder layer.
pub fn extract_alignment_attention(record: &AttentionRecord) -> Result<Vec<Vec<f64>>> {
    let n = record.n_layers();
    if n < 2 {
        return Err(Error::invalid(format!(
            "alignment attention needs a penultimate decoder layer, model has {n}"
        )));
    }
    let heads = &record.layers[n - 2];
    let h = heads.len() as f64;
    let rows = heads[0].len();
    let cols = heads[0].first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; cols]; rows];
    for head in heads {
        for (orow, hrow) in out.iter_mut().zip(head) {
            for (o, v) in orow.iter_mut().zip(hrow) {
                *o += v;
            }
        }
    }
    for row in &mut out {
        for v in row.iter_mut() {
            *v /= h;
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Shapes for one multi-head attention call over a padded batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnShape {
    pub batch: usize,
    pub tq: usize,
    pub tk: usize,
    pub heads: usize,
    pub d: usize,
}

/// Scaled dot-product attention. `q` is `[batch*tq, d]`, `k`/`v` are
/// `[batch*tk, d]`. Keys of row `b` at or beyond `key_len[b]` are padding.
/// Returns the context `[batch*tq, d]` and probabilities
/// `[batch, heads, tq, tk]`; masked keys get exactly zero probability.
pub(crate) fn attention_forward<T: Real>(
    sh: AttnShape,
    q: &[T],
    k: &[T],
    v: &[T],
    key_len: Option<&[usize]>,
    causal: bool,
) -> (Vec<T>, Vec<T>) {
    let AttnShape {
        batch,
        tq,
        tk,
        heads,
        d,
    } = sh;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut ctx = vec![T::zero(); batch * tq * d];
    let mut probs = vec![T::zero(); batch * heads * tq * tk];
    for b in 0..batch {
        let kl = key_len.map_or(tk, |l| l[b]);
        let kb = &k[b * tk * d..(b + 1) * tk * d];
        let vb = &v[b * tk * d..(b + 1) * tk * d];
        for h in 0..heads {
            for i in 0..tq {
                let qi = &q[(b * tq + i) * d + h * dh..][..dh];
                let row = &mut probs[((b * heads + h) * tq + i) * tk..][..tk];
                let limit = if causal { (i + 1).min(kl) } else { kl };
                let row = &mut row[..limit];
                let mut max = T::neg_infinity();
                for (j, r) in row.iter_mut().enumerate() {
                    let s = dot(qi, &kb[j * d + h * dh..][..dh]) * scale;
                    *r = s;
                    max = max.max(s);
                }
                let mut sum = T::zero();
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    sum += *r;
                }
                let inv = T::one() / sum;
                let out = &mut ctx[(b * tq + i) * d + h * dh..][..dh];
                for (j, r) in row.iter_mut().enumerate() {
                    *r *= inv;
                    axpy(*r, &vb[j * d + h * dh..][..dh], out);
                }
            }
        }
    }
    (ctx, probs)
}

/// Gradients of [`attention_forward`] w.r.t. `q`, `k`, `v`. Probabilities
/// that are exactly zero are the masked ones and carry no gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Real>(
    sh: AttnShape,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dctx: &[T],
    key_len: Option<&[usize]>,
    causal: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let AttnShape {
        batch,
        tq,
        tk,
        heads,
        d,
    } = sh;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut dq = vec![T::zero(); batch * tq * d];
    let mut dk = vec![T::zero(); batch * tk * d];
    let mut dv = vec![T::zero(); batch * tk * d];
    let mut dp = vec![T::zero(); tk];
    for b in 0..batch {
        let kl = key_len.map_or(tk, |l| l[b]);
        let span = b * tk * d..(b + 1) * tk * d;
        let (kb, vb) = (&k[span.clone()], &v[span.clone()]);
        let (dkb, dvb) = (&mut dk[span.clone()], &mut dv[span]);
        for h in 0..heads {
            for i in 0..tq {
                let qrow = (b * tq + i) * d + h * dh;
                let limit = if causal { (i + 1).min(kl) } else { kl };
                let prow = &probs[((b * heads + h) * tq + i) * tk..][..limit];
                let g = &dctx[qrow..qrow + dh];
                let mut weighted = T::zero();
                for (j, (&p, dpj)) in prow.iter().zip(dp.iter_mut()).enumerate() {
                    let off = j * d + h * dh;
                    *dpj = dot(g, &vb[off..off + dh]);
                    weighted += p * *dpj;
                    axpy(p, g, &mut dvb[off..off + dh]);
                }
                let qi = &q[qrow..qrow + dh];
                let dqi = &mut dq[qrow..qrow + dh];
                for (j, (&p, &dpj)) in prow.iter().zip(dp.iter()).enumerate() {
                    let ds = p * (dpj - weighted) * scale;
                    let off = j * d + h * dh;
                    axpy(ds, &kb[off..off + dh], dqi);
                    axpy(ds, qi, &mut dkb[off..off + dh]);
                }
            }
        }
    }
    (dq, dk, dv)
}
