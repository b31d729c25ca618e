use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{write_file, ParallelCorpus, Tokens};
use crate::error::{Error, Result};
use crate::special::{is_reserved, RESERVED, UNK};

/// Dense token ids; `0..5` are the reserved control tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub shared: bool,
}

impl Vocabulary {
    /// Reserved tokens followed by `tokens` in the given order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>, shared: bool) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if i >= RESERVED.len() && is_reserved(t) {
                return Err(Error::invalid(format!("reserved token {t} listed as a regular entry")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self {
            tokens: all,
            index,
            shared,
        })
    }

    /// Frequency-sorted (ties by token string) entries seen at least
    /// `min_count` times.
    pub fn from_counts<'a>(
        sentences: impl IntoIterator<Item = &'a Tokens>,
        min_count: usize,
        shared: bool,
    ) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut total = 0usize;
        for s in sentences {
            for t in s.iter().filter(|t| !is_reserved(t)) {
                *counts.entry(t.as_str()).or_default() += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut entries: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(entries.into_iter().map(|(t, _)| t.to_string()), shared)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn to_text(&self) -> String {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t}\t{i}\n"))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    /// Reads `token TAB id` lines; ids must be dense and reserved ids must
    /// hold the reserved tokens.
    pub fn load(path: &Path, shared: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 1, "expected `token TAB id`".into()))?;
            let id: usize = id.parse().map_err(|_| err(i + 1, format!("bad id {id:?}")))?;
            if id != i {
                return Err(err(i + 1, format!("id {id} out of order, expected {i}")));
            }
            if i < RESERVED.len() && tok != RESERVED[i] {
                return Err(err(i + 1, format!("id {i} must be {}", RESERVED[i])));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < RESERVED.len() {
            return Err(err(tokens.len(), "vocabulary lacks reserved entries".into()));
        }
        Self::from_tokens(tokens.into_iter().skip(RESERVED.len()), shared)
            .map_err(|e| err(0, e.to_string()))
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// The id spaces a model sees: one shared table, or per-side tables laid
/// side by side so a single embedding matrix still covers both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Vocabs {
    Shared(Vocabulary),
    Split {
        source: Vocabulary,
        target: Vocabulary,
    },
}

impl Vocabs {
    pub fn is_shared(&self) -> bool {
        matches!(self, Vocabs::Shared(_))
    }

    /// Rows of the model's embedding table.
    pub fn model_size(&self) -> usize {
        match self {
            Vocabs::Shared(v) => v.len(),
            Vocabs::Split { source, target } => source.len() + target.len() - RESERVED.len(),
        }
    }

    fn target_offset(&self) -> u32 {
        match self {
            Vocabs::Shared(_) => 0,
            Vocabs::Split { source, .. } => (source.len() - RESERVED.len()) as u32,
        }
    }

    pub fn encode_source(&self, tokens: &[String]) -> Vec<u32> {
        match self {
            Vocabs::Shared(v) => v.encode(tokens),
            Vocabs::Split { source, .. } => source.encode(tokens),
        }
    }

    pub fn encode_target(&self, tokens: &[String]) -> Vec<u32> {
        match self {
            Vocabs::Shared(v) => v.encode(tokens),
            Vocabs::Split { target, .. } => {
                let off = self.target_offset();
                tokens
                    .iter()
                    .map(|t| match target.id(t) {
                        id if (id as usize) < RESERVED.len() => id,
                        id => id + off,
                    })
                    .collect()
            }
        }
    }

    /// Model ids back to target tokens; ids outside the target space
    /// become `<unk>`.
    pub fn decode_target(&self, ids: &[u32]) -> Tokens {
        let (vocab, off) = match self {
            Vocabs::Shared(v) => (v, 0),
            Vocabs::Split { target, .. } => (target, self.target_offset()),
        };
        ids.iter()
            .map(|&id| {
                let local = if (id as usize) < RESERVED.len() {
                    Some(id)
                } else {
                    id.checked_sub(off).filter(|&l| l as usize >= RESERVED.len())
                };
                local
                    .and_then(|l| vocab.token(l))
                    .unwrap_or(crate::special::UNK_TOKEN)
                    .to_string()
            })
            .collect()
    }

    pub fn fingerprint(&self) -> String {
        match self {
            Vocabs::Shared(v) => v.fingerprint(),
            Vocabs::Split { source, target } => {
                hex::encode(Sha256::digest(format!("{}|{}", source.fingerprint(), target.fingerprint())))
            }
        }
    }
}

/// Vocabulary over an already segmented corpus: one table over both sides
/// when `shared`, otherwise one per side.
pub fn build_vocab(corpus: &ParallelCorpus, shared: bool, min_count: usize) -> Result<Vocabs> {
    if shared {
        let sides = corpus.pairs.iter().flat_map(|p| [&p.source, &p.target]);
        Ok(Vocabs::Shared(Vocabulary::from_counts(sides, min_count, true)?))
    } else {
        Ok(Vocabs::Split {
            source: Vocabulary::from_counts(corpus.pairs.iter().map(|p| &p.source), min_count, false)?,
            target: Vocabulary::from_counts(corpus.pairs.iter().map(|p| &p.target), min_count, false)?,
        })
    }
}
