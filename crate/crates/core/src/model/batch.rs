use crate::corpus::OriginTag;
use crate::special::{BOS, EOS, PAD};

/// One sentence pair as vocabulary ids. `src` ends with `<eos>`; `tgt` holds
/// the bare target and is shifted into decoder input/output when batched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
    pub origin: OriginTag,
}

impl EncodedPair {
    pub fn src_len(&self) -> usize {
        self.src.len()
    }

    /// Decoder positions: target plus `<bos>`/`<eos>` shift.
    pub fn tgt_len(&self) -> usize {
        self.tgt.len() + 1
    }

    /// Padded cost of this pair inside a batch whose rows are `len` wide.
    pub fn width(&self) -> usize {
        self.src_len().max(self.tgt_len())
    }

    pub fn swapped(&self) -> EncodedPair {
        let mut src = self.tgt.clone();
        src.push(EOS);
        let mut tgt = self.src.clone();
        if tgt.last() == Some(&EOS) {
            tgt.pop();
        }
        EncodedPair {
            src,
            tgt,
            origin: self.origin.swapped(),
        }
    }
}

/// Padded id matrices for teacher-forced training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    /// `batch_size × src_len`
    pub src: Vec<u32>,
    /// `<bos>` followed by the target, `batch_size × tgt_len`
    pub tgt_in: Vec<u32>,
    /// target followed by `<eos>`
    pub tgt_out: Vec<u32>,
    pub src_mask: Vec<bool>,
    pub tgt_mask: Vec<bool>,
    /// Non-pad decoder positions.
    pub n_tokens: usize,
}

impl Batch {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a EncodedPair>) -> Batch {
        let pairs: Vec<&EncodedPair> = pairs.into_iter().collect();
        let b = pairs.len();
        let s = pairs.iter().map(|p| p.src_len()).max().unwrap_or(0);
        let t = pairs.iter().map(|p| p.tgt_len()).max().unwrap_or(0);
        let mut batch = Batch {
            batch_size: b,
            src_len: s,
            tgt_len: t,
            src: vec![PAD; b * s],
            tgt_in: vec![PAD; b * t],
            tgt_out: vec![PAD; b * t],
            src_mask: vec![false; b * s],
            tgt_mask: vec![false; b * t],
            n_tokens: 0,
        };
        for (i, p) in pairs.iter().enumerate() {
            for (j, &id) in p.src.iter().enumerate() {
                batch.src[i * s + j] = id;
                batch.src_mask[i * s + j] = true;
            }
            batch.tgt_in[i * t] = BOS;
            for (j, &id) in p.tgt.iter().enumerate() {
                batch.tgt_in[i * t + j + 1] = id;
                batch.tgt_out[i * t + j] = id;
            }
            batch.tgt_out[i * t + p.tgt.len()] = EOS;
            for j in 0..p.tgt_len() {
                batch.tgt_mask[i * t + j] = true;
            }
            batch.n_tokens += p.tgt_len();
        }
        batch
    }

    /// Source-only batch with decoder prefixes, used while decoding.
    pub fn for_prefixes(src: &[u32], prefixes: &[Vec<u32>]) -> Batch {
        let b = prefixes.len();
        let s = src.len();
        let t = prefixes.iter().map(|p| p.len()).max().unwrap_or(0);
        let mut batch = Batch {
            batch_size: b,
            src_len: s,
            tgt_len: t,
            src: Vec::with_capacity(b * s),
            tgt_in: vec![PAD; b * t],
            tgt_out: vec![PAD; b * t],
            src_mask: vec![true; b * s],
            tgt_mask: vec![false; b * t],
            n_tokens: 0,
        };
        for (i, p) in prefixes.iter().enumerate() {
            batch.src.extend_from_slice(src);
            for (j, &id) in p.iter().enumerate() {
                batch.tgt_in[i * t + j] = id;
                batch.tgt_mask[i * t + j] = true;
            }
            batch.n_tokens += p.len();
        }
        batch
    }

    /// Padded footprint `batch_size × max(src_len, tgt_len)`.
    pub fn padded_tokens(&self) -> usize {
        self.batch_size * self.src_len.max(self.tgt_len)
    }
}
