//! Byte-pair-encoding subwords and the id spaces built on top of them.

mod bpe;
mod vocab;

pub use bpe::{apply_bpe, decode_bpe, learn_bpe, BpeModel, Segmenter, END_OF_WORD};
pub use vocab::{build_vocab, Vocabs, Vocabulary};

use crate::corpus::{MonoCorpus, ParallelCorpus, SentencePair};
use crate::error::Result;

/// Applies `model` to both sides of every pair; provenance is kept.
pub fn segment_corpus(model: &BpeModel, corpus: &ParallelCorpus) -> Result<ParallelCorpus> {
    let mut seg = Segmenter::new(model);
    let pairs = corpus
        .pairs
        .iter()
        .map(|p| SentencePair::new(seg.apply(&p.source), seg.apply(&p.target), p.origin))
        .collect::<Result<Vec<_>>>()?;
    ParallelCorpus::new(pairs, &corpus.source_lang, &corpus.target_lang)
}

pub fn segment_mono(model: &BpeModel, mono: &MonoCorpus) -> Result<MonoCorpus> {
    let mut seg = Segmenter::new(model);
    MonoCorpus::new(mono.sentences.iter().map(|s| seg.apply(s)).collect(), &mono.language)
}
