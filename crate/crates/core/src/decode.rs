//! Beam search over a trained model.
//!
//! Hypotheses never emit `<pad>` or `<bos>`. Every other id is a legal
//! continuation, and `<eos>` finishes a hypothesis. A finished hypothesis
//! keeps its slot in the beam, so the live beam shrinks as hypotheses end.
//! Search stops when the beam is empty or the length cap is reached.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{OriginTag, Tokens};
use crate::error::{Error, Result};
use crate::model::{forward, AttentionRecord, Batch, DecoderSession, EncodedPair, Mode, ModelParams, Real};
use crate::special::{BOS, EOS, PAD};
use crate::tokenizer::Vocabs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Exponent α of the length normalizer `len^α`.
    pub length_penalty: f64,
    /// Cap on generated tokens (including `<eos>`) as a multiple of the
    /// source length.
    pub max_len_factor: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            length_penalty: 1.0,
            max_len_factor: 2.0,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::invalid("beam_size must be at least 1"));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::invalid("length_penalty must be finite and >= 0"));
        }
        if !(self.max_len_factor > 0.0 && self.max_len_factor.is_finite()) {
            return Err(Error::invalid("max_len_factor must be finite and > 0"));
        }
        Ok(())
    }

    /// Most tokens a hypothesis may hold for a source of `src_len` ids.
    pub fn max_len(&self, src_len: usize, max_positions: usize) -> usize {
        let cap = (self.max_len_factor * src_len as f64).ceil() as usize;
        cap.clamp(1, max_positions.saturating_sub(1).max(1))
    }

    /// The objective beam search maximizes.
    pub fn normalized(&self, score: f64, len: usize) -> f64 {
        if self.length_penalty == 0.0 {
            score
        } else {
            score / (len as f64).powf(self.length_penalty)
        }
    }
}

/// A generated sequence with its summed token log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, ending in `<eos>` when finished.
    pub tokens: Vec<u32>,
    pub score: f64,
}

impl Hypothesis {
    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    /// Tokens with the closing `<eos>` removed.
    pub fn content(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Higher score first, then lower ids, then shorter.
pub fn rank(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub fn can_emit(id: u32) -> bool {
    id != PAD && id != BOS
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub best: Hypothesis,
    /// Cross-attention of the best hypothesis, teacher-forced.
    pub attention: AttentionRecord,
}

/// Beam search for the hypothesis maximizing `score / len^α`.
pub fn beam_decode<T: Real>(params: &ModelParams<T>, source: &[u32], beam: &BeamConfig) -> Result<Decoded> {
    beam.validate()?;
    let session = DecoderSession::new(params, source)?;
    let max_len = beam.max_len(source.len(), params.config.max_positions);
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..max_len {
        let prefixes: Vec<Vec<u32>> = live
            .iter()
            .map(|h| std::iter::once(BOS).chain(h.tokens.iter().copied()).collect())
            .collect();
        let rows = session.next_log_probs(&prefixes)?;
        let mut candidates: Vec<Hypothesis> = Vec::with_capacity(live.len() * rows[0].len());
        for (h, row) in live.iter().zip(&rows) {
            for (id, &lp) in row.iter().enumerate() {
                let id = id as u32;
                if !can_emit(id) {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(id);
                candidates.push(Hypothesis {
                    tokens,
                    score: h.score + lp,
                });
            }
        }
        let slots = beam.beam_size - finished.len();
        candidates.sort_by(|a, b| rank((a.score, &a.tokens), (b.score, &b.tokens)));
        candidates.truncate(slots);
        live.clear();
        for c in candidates {
            if c.finished() || step + 1 == max_len {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
    }

    let best = finished
        .into_iter()
        .min_by(|a, b| {
            rank(
                (beam.normalized(a.score, a.tokens.len()), &a.tokens),
                (beam.normalized(b.score, b.tokens.len()), &b.tokens),
            )
        })
        .expect("beam search finishes at least one hypothesis");
    let attention = teacher_forced_attention(params, source, best.content())?;
    Ok(Decoded { best, attention })
}

/// One translated sentence in target tokens.
#[derive(Debug, Clone)]
pub struct Translation {
    /// Target tokens without `<eos>`.
    pub tokens: Tokens,
    /// Model ids of the source, `<eos>` included.
    pub source_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub score: f64,
    pub attention: AttentionRecord,
}

/// Encodes `source`, beam-decodes it and maps the result back to tokens.
pub fn translate<T: Real>(
    params: &ModelParams<T>,
    vocabs: &Vocabs,
    source: &[String],
    beam: &BeamConfig,
) -> Result<Translation> {
    let mut source_ids = vocabs.encode_source(source);
    source_ids.push(EOS);
    let d = beam_decode(params, &source_ids, beam)?;
    let target_ids = d.best.content().to_vec();
    Ok(Translation {
        tokens: vocabs.decode_target(&target_ids),
        source_ids,
        target_ids,
        score: d.best.score,
        attention: d.attention,
    })
}

/// Cross-attention for a fixed source/target pair; the last row belongs to
/// `<eos>`.
pub fn teacher_forced_attention<T: Real>(
    params: &ModelParams<T>,
    source: &[u32],
    target: &[u32],
) -> Result<AttentionRecord> {
    let pair = EncodedPair {
        src: source.to_vec(),
        tgt: target.to_vec(),
        origin: OriginTag::Original,
    };
    let out = forward(params, &Batch::from_pairs([&pair]), Mode::Eval)?;
    Ok(out.attention(0))
}

/// Greedy decoding, the `beam_size = 1` special case.
pub fn greedy_decode<T: Real>(params: &ModelParams<T>, source: &[u32], max_len_factor: f64) -> Result<Decoded> {
    beam_decode(
        params,
        source,
        &BeamConfig {
            beam_size: 1,
            length_penalty: 1.0,
            max_len_factor,
        },
    )
}

/// Summed log-probability of `tokens` (generated ids, `<eos>` included if
/// present) under teacher forcing.
pub fn sequence_score<T: Real>(params: &ModelParams<T>, source: &[u32], tokens: &[u32]) -> Result<f64> {
    let session = DecoderSession::new(params, source)?;
    let mut prefix = vec![BOS];
    let mut total = 0.0;
    for &id in tokens {
        total += session.next_log_probs(std::slice::from_ref(&prefix))?[0][id as usize];
        prefix.push(id);
    }
    Ok(total)
}
