use super::attention::{attention_backward, attention_forward, axpy, AttnShape};
use super::layout::{AttnSpans, FfnSpans, LinearSpans, NormSpans};
use super::{gemm, AttentionRecord, Batch, Gradients, LossValue, ModelParams, Real};
use crate::error::{Error, Result};
use crate::rng::{derive_key, draw_at};

const NORM_EPS: f64 = 1e-5;


#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// No dropout; bit-stable.
    Eval,
    /// Dropout masks drawn from `dropout_seed`, so a replay is exact.
    Train { dropout_seed: u64 },
}

// Dropout site ids. Encoder layer l uses ENC_SITE + 4l + {0,1}, decoder
// layer l uses DEC_SITE + 4l + {0,1,2}.
const SITE_SRC_EMBED: u64 = 1;
const SITE_TGT_EMBED: u64 = 2;
const ENC_SITE: u64 = 100;
const DEC_SITE: u64 = 1000;

fn dropout_mask<T: Real>(mode: Mode, rate: f64, site: u64, len: usize) -> Option<Vec<T>> {
    let Mode::Train { dropout_seed } = mode else {
        return None;
    };
    if rate == 0.0 {
        return None;
    }
    // Each 64-bit draw decides two elements through its 32-bit halves.
    let key = derive_key(dropout_seed, &[site]);
    let threshold = (rate * 4_294_967_296.0).round() as u64;
    let keep = T::of(1.0 / (1.0 - rate));
    let mut mask = Vec::with_capacity(len + 1);
    for i in 0..(len as u64).div_ceil(2) {
        let r = draw_at(key, i);
        for half in [r & 0xffff_ffff, r >> 32] {
            mask.push(if half < threshold { T::zero() } else { keep });
        }
    }
    mask.truncate(len);
    Some(mask)
}

fn apply_mask<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

fn check_finite<T: Real>(x: &[T], site: impl FnOnce() -> String) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { site: site() })
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// ---------------------------------------------------------------- linear

fn linear_fwd<T: Real>(p: &[T], sp: LinearSpans, x: &[T], n: usize) -> Vec<T> {
    let (din, dout) = (sp.w.rows, sp.w.cols);
    let bias = &p[sp.b.range()];
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    gemm(false, false, n, din, dout, x, &p[sp.w.range()], T::one(), &mut y);
    y
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn linear_bwd<T: Real>(
    p: &[T],
    g: &mut [T],
    sp: LinearSpans,
    x: &[T],
    dy: &[T],
    n: usize,
) -> Vec<T> {
    let (din, dout) = (sp.w.rows, sp.w.cols);
    gemm(true, false, din, n, dout, x, dy, T::one(), &mut g[sp.w.range()]);
    let gb = &mut g[sp.b.range()];
    for r in 0..n {
        axpy(T::one(), &dy[r * dout..(r + 1) * dout], gb);
    }
    let mut dx = vec![T::zero(); n * din];
    gemm(false, true, n, dout, din, dy, &p[sp.w.range()], T::zero(), &mut dx);
    dx
}

// ------------------------------------------------------------ layer norm

struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn norm_fwd<T: Real>(p: &[T], sp: NormSpans, x: &[T], n: usize) -> (Vec<T>, NormCache<T>) {
    let d = sp.g.cols;
    let (gamma, beta) = (&p[sp.g.range()], &p[sp.b.range()]);
    let mut y = vec![T::zero(); n * d];
    let mut xhat = vec![T::zero(); n * d];
    let mut rstd = vec![T::zero(); n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + NORM_EPS).sqrt();
        rstd[r] = T::of(rs);
        let (m, rs) = (T::of(mean), T::of(rs));
        for c in 0..d {
            let h = (row[c] - m) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * gamma[c] + beta[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn norm_bwd<T: Real>(p: &[T], g: &mut [T], sp: NormSpans, cache: &NormCache<T>, dy: &[T]) -> Vec<T> {
    let d = sp.g.cols;
    let n = cache.rstd.len();
    let gamma = &p[sp.g.range()];
    let mut dx = vec![T::zero(); n * d];
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let inv_d = T::of(1.0 / d as f64);
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut sum_dxh = T::zero();
        let mut sum_dxh_xh = T::zero();
        for c in 0..d {
            dgamma[c] += dyr[c] * xh[c];
            dbeta[c] += dyr[c];
            let dxh = dyr[c] * gamma[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
        }
        let (m1, m2) = (sum_dxh * inv_d, sum_dxh_xh * inv_d);
        let rs = cache.rstd[r];
        for c in 0..d {
            let dxh = dyr[c] * gamma[c];
            dx[r * d + c] = rs * (dxh - m1 - xh[c] * m2);
        }
    }
    add_into(&mut g[sp.g.range()], &dgamma);
    add_into(&mut g[sp.b.range()], &dbeta);
    dx
}

// ------------------------------------------------------------- sublayers

struct AttnCache<T> {
    norm: NormCache<T>,
    hq: Vec<T>,
    kv_in: Option<Vec<T>>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    drop: Option<Vec<T>>,
    key_len: Option<Vec<usize>>,
    shape: AttnShape,
}

#[allow(clippy::too_many_arguments)]
fn attn_block_fwd<T: Real>(
    p: &[T],
    norm_sp: NormSpans,
    sp: AttnSpans,
    x: &[T],
    kv_src: Option<&[T]>,
    shape: AttnShape,
    key_len: Option<&[usize]>,
    causal: bool,
    mode: Mode,
    rate: f64,
    site: u64,
) -> (Vec<T>, AttnCache<T>) {
    let nq = shape.batch * shape.tq;
    let nk = shape.batch * shape.tk;
    let (hq, norm) = norm_fwd(p, norm_sp, x, nq);
    let kv = kv_src.unwrap_or(&hq);
    let q = linear_fwd(p, sp.q, &hq, nq);
    let k = linear_fwd(p, sp.k, kv, nk);
    let v = linear_fwd(p, sp.v, kv, nk);
    let (ctx, probs) = attention_forward(shape, &q, &k, &v, key_len, causal);
    let mut out = linear_fwd(p, sp.o, &ctx, nq);
    let drop = dropout_mask(mode, rate, site, out.len());
    apply_mask(&mut out, &drop);
    let cache = AttnCache {
        norm,
        kv_in: kv_src.map(|s| s.to_vec()),
        hq,
        q,
        k,
        v,
        probs,
        ctx,
        drop,
        key_len: key_len.map(<[usize]>::to_vec),
        shape,
    };
    (out, cache)
}

/// Returns the gradient w.r.t. the block input and, for cross attention,
/// w.r.t. the key/value source.
fn attn_block_bwd<T: Real>(
    p: &[T],
    g: &mut [T],
    norm_sp: NormSpans,
    sp: AttnSpans,
    c: &AttnCache<T>,
    dout: &[T],
    causal: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let nq = c.shape.batch * c.shape.tq;
    let nk = c.shape.batch * c.shape.tk;
    let mut dout = dout.to_vec();
    apply_mask(&mut dout, &c.drop);
    let dctx = linear_bwd(p, g, sp.o, &c.ctx, &dout, nq);
    let (dq, dk, dv) = attention_backward(
        c.shape,
        &c.q,
        &c.k,
        &c.v,
        &c.probs,
        &dctx,
        c.key_len.as_deref(),
        causal,
    );
    let kv = c.kv_in.as_deref().unwrap_or(&c.hq);
    let mut dkv = linear_bwd(p, g, sp.k, kv, &dk, nk);
    add_into(&mut dkv, &linear_bwd(p, g, sp.v, kv, &dv, nk));
    let mut dhq = linear_bwd(p, g, sp.q, &c.hq, &dq, nq);
    let dkv_out = if c.kv_in.is_some() {
        Some(dkv)
    } else {
        add_into(&mut dhq, &dkv);
        None
    };
    (norm_bwd(p, g, norm_sp, &c.norm, &dhq), dkv_out)
}

struct FfnCache<T> {
    norm: NormCache<T>,
    h: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
    drop: Option<Vec<T>>,
}

fn ffn_fwd<T: Real>(
    p: &[T],
    sp: FfnSpans,
    x: &[T],
    n: usize,
    mode: Mode,
    rate: f64,
    site: u64,
) -> (Vec<T>, FfnCache<T>) {
    let (h, norm) = norm_fwd(p, sp.norm, x, n);
    let pre = linear_fwd(p, sp.up, &h, n);
    let act: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
    let mut out = linear_fwd(p, sp.down, &act, n);
    let drop = dropout_mask(mode, rate, site, out.len());
    apply_mask(&mut out, &drop);
    (
        out,
        FfnCache {
            norm,
            h,
            pre,
            act,
            drop,
        },
    )
}

fn ffn_bwd<T: Real>(p: &[T], g: &mut [T], sp: FfnSpans, c: &FfnCache<T>, dout: &[T]) -> Vec<T> {
    let n = c.norm.rstd.len();
    let mut dout = dout.to_vec();
    apply_mask(&mut dout, &c.drop);
    let mut dpre = linear_bwd(p, g, sp.down, &c.act, &dout, n);
    for (d, &z) in dpre.iter_mut().zip(&c.pre) {
        if z <= T::zero() {
            *d = T::zero();
        }
    }
    let dh = linear_bwd(p, g, sp.up, &c.h, &dpre, n);
    norm_bwd(p, g, sp.norm, &c.norm, &dh)
}

// -------------------------------------------------------------- embedding

fn positional<T: Real>(pos: usize, d: usize) -> impl Iterator<Item = T> {
    (0..d).map(move |i| {
        let pair = (i / 2 * 2) as f64;
        let angle = pos as f64 / 10000f64.powf(pair / d as f64);
        T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

fn embed<T: Real>(params: &ModelParams<T>, ids: &[u32], len: usize) -> Vec<T> {
    let d = params.config.d_model;
    let scale = T::of((d as f64).sqrt());
    let table = params.tensor(params.layout.embed);
    let pe: Vec<T> = (0..len).flat_map(|pos| positional::<T>(pos, d)).collect();
    let mut x = Vec::with_capacity(ids.len() * d);
    for (r, &id) in ids.iter().enumerate() {
        let row = &table[id as usize * d..(id as usize + 1) * d];
        let pos = r % len;
        x.extend(row.iter().zip(&pe[pos * d..(pos + 1) * d]).map(|(&e, &q)| e * scale + q));
    }
    x
}

fn embed_bwd<T: Real>(params: &ModelParams<T>, g: &mut [T], ids: &[u32], dx: &[T]) {
    let d = params.config.d_model;
    let scale = T::of((d as f64).sqrt());
    let off = params.layout.embed.offset;
    for (r, &id) in ids.iter().enumerate() {
        let start = off + id as usize * d;
        axpy(scale, &dx[r * d..(r + 1) * d], &mut g[start..start + d]);
    }
}

// ---------------------------------------------------------- encoder/decoder

struct EncoderCache<T> {
    drop: Option<Vec<T>>,
    layers: Vec<(AttnCache<T>, FfnCache<T>)>,
    norm: NormCache<T>,
    out: Vec<T>,
}

fn validate_ids(ids: &[u32], vocab: usize, what: &str) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= vocab) {
        Some(id) => Err(Error::invalid(format!(
            "{what} id {id} out of range for vocabulary of {vocab}"
        ))),
        None => Ok(()),
    }
}

fn encode<T: Real>(
    params: &ModelParams<T>,
    src: &[u32],
    src_lens: &[usize],
    batch: usize,
    len: usize,
    mode: Mode,
) -> Result<EncoderCache<T>> {
    let cfg = &params.config;
    let p = &params.data;
    let n = batch * len;
    let rate = cfg.dropout_rate;
    let mut x = embed(params, src, len);
    let drop = dropout_mask(mode, rate, SITE_SRC_EMBED, x.len());
    apply_mask(&mut x, &drop);
    let shape = AttnShape {
        batch,
        tq: len,
        tk: len,
        heads: cfg.n_heads,
        d: cfg.d_model,
    };
    let mut layers = Vec::with_capacity(cfg.n_enc_layers);
    for (l, sp) in params.layout.enc.iter().enumerate() {
        let site = ENC_SITE + 4 * l as u64;
        let (a, ac) = attn_block_fwd(
            p,
            sp.attn_norm,
            sp.attn,
            &x,
            None,
            shape,
            Some(src_lens),
            false,
            mode,
            rate,
            site,
        );
        add_into(&mut x, &a);
        let (f, fc) = ffn_fwd(p, sp.ffn, &x, n, mode, rate, site + 1);
        add_into(&mut x, &f);
        check_finite(&x, || format!("encoder layer {l} forward"))?;
        layers.push((ac, fc));
    }
    let (out, norm) = norm_fwd(p, params.layout.enc_norm, &x, n);
    Ok(EncoderCache {
        drop,
        layers,
        norm,
        out,
    })
}

struct DecoderCache<T> {
    drop: Option<Vec<T>>,
    layers: Vec<(AttnCache<T>, AttnCache<T>, FfnCache<T>)>,
    norm: NormCache<T>,
    out: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn decode<T: Real>(
    params: &ModelParams<T>,
    enc_out: &[T],
    src_lens: &[usize],
    src_len: usize,
    tgt_in: &[u32],
    batch: usize,
    len: usize,
    mode: Mode,
) -> Result<DecoderCache<T>> {
    let cfg = &params.config;
    let p = &params.data;
    let n = batch * len;
    let rate = cfg.dropout_rate;
    let mut x = embed(params, tgt_in, len);
    let drop = dropout_mask(mode, rate, SITE_TGT_EMBED, x.len());
    apply_mask(&mut x, &drop);
    let self_shape = AttnShape {
        batch,
        tq: len,
        tk: len,
        heads: cfg.n_heads,
        d: cfg.d_model,
    };
    let cross_shape = AttnShape {
        tk: src_len,
        ..self_shape
    };
    let mut layers = Vec::with_capacity(cfg.n_dec_layers);
    for (l, sp) in params.layout.dec.iter().enumerate() {
        let site = DEC_SITE + 4 * l as u64;
        let (a, sc) = attn_block_fwd(
            p,
            sp.self_norm,
            sp.self_attn,
            &x,
            None,
            self_shape,
            None,
            true,
            mode,
            rate,
            site,
        );
        add_into(&mut x, &a);
        let (c, cc) = attn_block_fwd(
            p,
            sp.cross_norm,
            sp.cross_attn,
            &x,
            Some(enc_out),
            cross_shape,
            Some(src_lens),
            false,
            mode,
            rate,
            site + 1,
        );
        add_into(&mut x, &c);
        let (f, fc) = ffn_fwd(p, sp.ffn, &x, n, mode, rate, site + 2);
        add_into(&mut x, &f);
        check_finite(&x, || format!("decoder layer {l} forward"))?;
        layers.push((sc, cc, fc));
    }
    let (out, norm) = norm_fwd(p, params.layout.dec_norm, &x, n);
    Ok(DecoderCache {
        drop,
        layers,
        norm,
        out,
    })
}

/// Tied output projection followed by a row-wise log-softmax.
fn output_log_probs<T: Real>(params: &ModelParams<T>, h: &[T], n: usize) -> Vec<T> {
    let (v, d) = (params.config.vocab_size, params.config.d_model);
    let mut logits = vec![T::zero(); n * v];
    gemm(false, true, n, d, v, h, params.tensor(params.layout.embed), T::zero(), &mut logits);
    for row in logits.chunks_mut(v) {
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let sum: f64 = row.iter().map(|&x| (x - max).exp().f64()).sum();
        let lse = max + T::of(sum.ln());
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    logits
}

// ------------------------------------------------------------------ public

/// Per-position log-probabilities plus everything backward needs.
pub struct ForwardOutput<T: Real> {
    /// `[batch * tgt_len, vocab]`
    pub log_probs: Vec<T>,
    pub vocab: usize,
    pub batch_size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    src_lens: Vec<usize>,
    tgt_lens: Vec<usize>,
    enc: EncoderCache<T>,
    dec: DecoderCache<T>,
}

impl<T: Real> ForwardOutput<T> {
    pub fn log_probs_at(&self, b: usize, t: usize) -> &[T] {
        let row = b * self.tgt_len + t;
        &self.log_probs[row * self.vocab..(row + 1) * self.vocab]
    }

    /// Cross-attention of batch row `b`, trimmed to its real source and
    /// target positions.
    pub fn attention(&self, b: usize) -> AttentionRecord {
        let (tq, tk) = (self.tgt_len, self.src_len);
        let (real_t, real_s) = (self.tgt_lens[b], self.src_lens[b]);
        let layers = self
            .dec
            .layers
            .iter()
            .map(|(_, cross, _)| {
                let heads = cross.shape.heads;
                (0..heads)
                    .map(|h| {
                        (0..real_t)
                            .map(|i| {
                                let base = ((b * heads + h) * tq + i) * tk;
                                cross.probs[base..base + real_s].iter().map(|v| v.f64()).collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        AttentionRecord { layers }
    }

    /// Self-attention probabilities of every encoder layer, `[batch, heads, len, len]`.
    pub fn encoder_self_attention(&self) -> Vec<Vec<f64>> {
        self.enc
            .layers
            .iter()
            .map(|(a, _)| a.probs.iter().map(|v| v.f64()).collect())
            .collect()
    }

    /// Untrimmed cross-attention of every decoder layer, padding included,
    /// `[batch, heads, tgt_len, src_len]`.
    pub fn decoder_cross_attention(&self) -> Vec<Vec<f64>> {
        self.dec
            .layers
            .iter()
            .map(|(_, cross, _)| cross.probs.iter().map(|v| v.f64()).collect())
            .collect()
    }
}

/// Real lengths of each row; masks must be a run of `true` then padding.
fn prefix_lengths(mask: &[bool], rows: usize, len: usize, what: &str) -> Result<Vec<usize>> {
    (0..rows)
        .map(|r| {
            let row = &mask[r * len..(r + 1) * len];
            let n = row.iter().take_while(|&&m| m).count();
            if n == 0 || row[n..].iter().any(|&m| m) {
                Err(Error::invalid(format!("{what} mask of row {r} is empty or not prefix-shaped")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

fn check_batch<T: Real>(params: &ModelParams<T>, batch: &Batch) -> Result<(Vec<usize>, Vec<usize>)> {
    let cfg = &params.config;
    if batch.batch_size == 0 || batch.src_len == 0 || batch.tgt_len == 0 {
        return Err(Error::invalid("empty batch"));
    }
    validate_ids(&batch.src, cfg.vocab_size, "source")?;
    validate_ids(&batch.tgt_in, cfg.vocab_size, "target")?;
    validate_ids(&batch.tgt_out, cfg.vocab_size, "target")?;
    let longest = batch.src_len.max(batch.tgt_len);
    if longest > cfg.max_positions {
        return Err(Error::invalid(format!(
            "sequence length {longest} exceeds max_positions {}",
            cfg.max_positions
        )));
    }
    Ok((
        prefix_lengths(&batch.src_mask, batch.batch_size, batch.src_len, "source")?,
        prefix_lengths(&batch.tgt_mask, batch.batch_size, batch.tgt_len, "target")?,
    ))
}

pub fn forward<T: Real>(params: &ModelParams<T>, batch: &Batch, mode: Mode) -> Result<ForwardOutput<T>> {
    let (src_lens, tgt_lens) = check_batch(params, batch)?;
    let (b, s, t) = (batch.batch_size, batch.src_len, batch.tgt_len);
    let enc = encode(params, &batch.src, &src_lens, b, s, mode)?;
    let dec = decode(params, &enc.out, &src_lens, s, &batch.tgt_in, b, t, mode)?;
    let log_probs = output_log_probs(params, &dec.out, b * t);
    check_finite(&log_probs, || "output projection".to_string())?;
    Ok(ForwardOutput {
        log_probs,
        vocab: params.config.vocab_size,
        batch_size: b,
        src_len: s,
        tgt_len: t,
        src_lens,
        tgt_lens,
        enc,
        dec,
    })
}

/// Exact gradients of the mean label-smoothed loss over the batch.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    batch: &Batch,
    epsilon: f64,
    mode: Mode,
) -> Result<(LossValue, Gradients<T>)> {
    let fwd = forward(params, batch, mode)?;
    let loss = super::label_smoothed_loss(
        &fwd.log_probs,
        fwd.vocab,
        &batch.tgt_out,
        &batch.tgt_mask,
        epsilon,
    )?;
    let (v, d) = (params.config.vocab_size, params.config.d_model);
    let (b, s, t) = (batch.batch_size, batch.src_len, batch.tgt_len);
    let p = &params.data;
    let mut grads = params.zeros_like();
    let g = &mut grads.data;

    // d loss / d logits = softmax - smoothed target, over non-pad rows.
    let inv_tokens = 1.0 / loss.tokens as f64;
    let (hit, spread) = (1.0 - epsilon, epsilon / v as f64);
    let mut dlogits = vec![T::zero(); b * t * v];
    for (r, (&y, &keep)) in batch.tgt_out.iter().zip(&batch.tgt_mask).enumerate() {
        if !keep {
            continue;
        }
        let lp = &fwd.log_probs[r * v..(r + 1) * v];
        let out = &mut dlogits[r * v..(r + 1) * v];
        for (c, (o, &l)) in out.iter_mut().zip(lp).enumerate() {
            let target = if c == y as usize { hit + spread } else { spread };
            *o = T::of((l.f64().exp() - target) * inv_tokens);
        }
    }

    let embed_range = params.layout.embed.range();
    gemm(true, false, v, b * t, d, &dlogits, &fwd.dec.out, T::one(), &mut g[embed_range.clone()]);
    let mut dh = vec![T::zero(); b * t * d];
    gemm(false, false, b * t, v, d, &dlogits, &p[embed_range], T::zero(), &mut dh);

    let mut dx = norm_bwd(p, g, params.layout.dec_norm, &fwd.dec.norm, &dh);
    let mut denc = vec![T::zero(); b * s * d];
    for (l, (sp, (sc, cc, fc))) in params.layout.dec.iter().zip(&fwd.dec.layers).enumerate().rev() {
        let df = ffn_bwd(p, g, sp.ffn, fc, &dx);
        add_into(&mut dx, &df);
        let (dc, dkv) = attn_block_bwd(p, g, sp.cross_norm, sp.cross_attn, cc, &dx, false);
        add_into(&mut dx, &dc);
        add_into(&mut denc, &dkv.expect("cross attention has a separate source"));
        let (da, _) = attn_block_bwd(p, g, sp.self_norm, sp.self_attn, sc, &dx, true);
        add_into(&mut dx, &da);
        check_finite(&dx, || format!("decoder layer {l} backward"))?;
    }
    apply_mask(&mut dx, &fwd.dec.drop);
    embed_bwd(params, g, &batch.tgt_in, &dx);

    let mut dx = norm_bwd(p, g, params.layout.enc_norm, &fwd.enc.norm, &denc);
    for (l, (sp, (ac, fc))) in params.layout.enc.iter().zip(&fwd.enc.layers).enumerate().rev() {
        let df = ffn_bwd(p, g, sp.ffn, fc, &dx);
        add_into(&mut dx, &df);
        let (da, _) = attn_block_bwd(p, g, sp.attn_norm, sp.attn, ac, &dx, false);
        add_into(&mut dx, &da);
        check_finite(&dx, || format!("encoder layer {l} backward"))?;
    }
    apply_mask(&mut dx, &fwd.enc.drop);
    embed_bwd(params, g, &batch.src, &dx);
    check_finite(g, || "embedding gradient".to_string())?;
    drop(fwd);
    Ok((loss, grads))
}

/// Encoder state of one source sentence, reused across decoding steps.
pub struct DecoderSession<'a, T: Real> {
    params: &'a ModelParams<T>,
    src: Vec<u32>,
    enc_out: Vec<T>,
}

impl<'a, T: Real> DecoderSession<'a, T> {
    pub fn new(params: &'a ModelParams<T>, src: &[u32]) -> Result<Self> {
        if src.is_empty() {
            return Err(Error::invalid("empty source sentence"));
        }
        validate_ids(src, params.config.vocab_size, "source")?;
        if src.len() > params.config.max_positions {
            return Err(Error::invalid(format!(
                "source length {} exceeds max_positions {}",
                src.len(),
                params.config.max_positions
            )));
        }
        let lens = [src.len()];
        let enc = encode(params, src, &lens, 1, src.len(), Mode::Eval)?;
        Ok(Self {
            params,
            src: src.to_vec(),
            enc_out: enc.out,
        })
    }

    pub fn source(&self) -> &[u32] {
        &self.src
    }

    /// Next-token log-probabilities after each prefix (prefixes start with
    /// `<bos>` and share one length).
    pub fn next_log_probs(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        let len = prefixes.first().map_or(0, |p| p.len());
        if len == 0 || prefixes.iter().any(|p| p.len() != len) {
            return Err(Error::invalid("decoder prefixes must be non-empty and of equal length"));
        }
        if len > self.params.config.max_positions {
            return Err(Error::invalid("hypothesis exceeds max_positions"));
        }
        let b = prefixes.len();
        let s = self.src.len();
        let ids: Vec<u32> = prefixes.iter().flatten().copied().collect();
        validate_ids(&ids, self.params.config.vocab_size, "target")?;
        let mut enc = Vec::with_capacity(b * self.enc_out.len());
        for _ in 0..b {
            enc.extend_from_slice(&self.enc_out);
        }
        let lens = vec![s; b];
        let dec = decode(self.params, &enc, &lens, s, &ids, b, len, Mode::Eval)?;
        let d = self.params.config.d_model;
        let last: Vec<T> = (0..b)
            .flat_map(|r| dec.out[(r * len + len - 1) * d..(r * len + len) * d].iter().copied())
            .collect();
        let lp = output_log_probs(self.params, &last, b);
        let v = self.params.config.vocab_size;
        Ok(lp.chunks(v).map(|row| row.iter().map(|x| x.f64()).collect()).collect())
    }
}
