use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::path::Path;

use crate::corpus::{write_file, Tokens};
use crate::error::{Error, Result};
use crate::special::{is_reserved, BT_TOKEN};

pub const END_OF_WORD: &str = "</w>";
const HEADER: &str = "bitrain-bpe v1";

type Pair = (String, String);

/// Ordered merge rules; earlier rules take priority at apply time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<Pair>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            if m.0.is_empty() || m.1.is_empty() {
                return Err(Error::invalid(format!("merge rule {i} has an empty side")));
            }
            if ranks.insert(m.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate merge rule {} {}", m.0, m.1)));
            }
        }
        Ok(Self { merges, ranks })
    }

    pub fn merges(&self) -> &[Pair] {
        &self.merges
    }

    pub fn end_of_word_marker(&self) -> &str {
        END_OF_WORD
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (a, b) in &self.merges {
            out.push_str(a);
            out.push(' ');
            out.push_str(b);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(parse_err(1, "missing `bitrain-bpe v1` header"));
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => return Err(parse_err(i + 2, "expected `left right`")),
            }
        }
        Self::from_merges(merges).map_err(|e| parse_err(0, &e.to_string()))
    }
}

/// Characters of `word`, the last one carrying the end-of-word marker.
fn initial_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(END_OF_WORD);
    }
    syms
}

fn merge_pair(syms: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

fn pairs_of(syms: &[String]) -> impl Iterator<Item = Pair> + '_ {
    syms.windows(2).map(|w| (w[0].clone(), w[1].clone()))
}

/// Learns up to `num_merges` rules from whitespace-tokenized sentences.
///
/// Each step merges the most frequent adjacent pair, ties going to the
/// lexicographically smallest `(left, right)`. Learning stops early once no
/// pair occurs at least twice. Reserved control tokens are not words and
/// are ignored.
pub fn learn_bpe(corpora: &[&[Tokens]], num_merges: usize) -> Result<BpeModel> {
    let mut freq: BTreeMap<&str, i64> = BTreeMap::new();
    for corpus in corpora {
        for sentence in corpus.iter() {
            for w in sentence.iter().filter(|w| !is_reserved(w)) {
                *freq.entry(w.as_str()).or_default() += 1;
            }
        }
    }
    if freq.is_empty() {
        return Err(Error::invalid("cannot learn BPE from empty corpora"));
    }

    let mut words: Vec<(Vec<String>, i64)> = freq
        .into_iter()
        .map(|(w, f)| (initial_symbols(w), f))
        .collect();
    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut occurs: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (idx, (syms, f)) in words.iter().enumerate() {
        for p in pairs_of(syms) {
            *counts.entry(p.clone()).or_default() += f;
            occurs.entry(p).or_default().insert(idx);
        }
    }
    // Lazy max-heap: stale entries are skipped when their count no longer
    // matches the live table.
    let mut heap: BinaryHeap<(i64, Reverse<Pair>)> =
        counts.iter().map(|(p, &c)| (c, Reverse(p.clone()))).collect();

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let best = loop {
            match heap.pop() {
                None => break None,
                Some((c, Reverse(p))) if counts.get(&p) == Some(&c) => break Some((c, p)),
                Some(_) => continue,
            }
        };
        let Some((count, pair)) = best else { break };
        if count < 2 {
            break;
        }
        let affected = occurs.remove(&pair).unwrap_or_default();
        let mut touched: BTreeSet<Pair> = BTreeSet::new();
        for idx in affected {
            let (old, f) = &words[idx];
            let f = *f;
            let new = merge_pair(old, &pair.0, &pair.1);
            if new.len() == old.len() {
                continue;
            }
            for p in pairs_of(old) {
                *counts.get_mut(&p).expect("counted") -= f;
                touched.insert(p);
            }
            for p in pairs_of(&new) {
                *counts.entry(p.clone()).or_default() += f;
                occurs.entry(p.clone()).or_default().insert(idx);
                touched.insert(p);
            }
            words[idx].0 = new;
        }
        for p in touched {
            match counts.get(&p) {
                Some(&c) if c > 0 => heap.push((c, Reverse(p))),
                _ => {
                    counts.remove(&p);
                }
            }
        }
        counts.remove(&pair);
        merges.push(pair);
    }
    BpeModel::from_merges(merges)
}

fn segment_word(model: &BpeModel, word: &str) -> Vec<String> {
    let mut syms = initial_symbols(word);
    loop {
        let best = syms
            .windows(2)
            .filter_map(|w| model.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
            .min_by_key(|(r, _)| *r);
        let Some((_, w)) = best else { break };
        let (a, b) = (w[0].clone(), w[1].clone());
        syms = merge_pair(&syms, &a, &b);
    }
    syms
}

/// Segments every word by repeatedly applying its highest-priority merge.
/// Reserved control tokens pass through untouched.
pub fn apply_bpe(model: &BpeModel, sentence: &[String]) -> Tokens {
    let mut out = Vec::with_capacity(sentence.len() * 2);
    for w in sentence {
        if is_reserved(w) {
            out.push(w.clone());
        } else {
            out.extend(segment_word(model, w));
        }
    }
    out
}

/// Memoizing wrapper for segmenting whole corpora.
pub struct Segmenter<'a> {
    model: &'a BpeModel,
    cache: HashMap<String, Vec<String>>,
}

impl<'a> Segmenter<'a> {
    pub fn new(model: &'a BpeModel) -> Self {
        Self {
            model,
            cache: HashMap::new(),
        }
    }

    pub fn apply(&mut self, sentence: &[String]) -> Tokens {
        let mut out = Vec::with_capacity(sentence.len() * 2);
        for w in sentence {
            if is_reserved(w) {
                out.push(w.clone());
                continue;
            }
            let model = self.model;
            let pieces = self
                .cache
                .entry(w.clone())
                .or_insert_with(|| segment_word(model, w));
            out.extend(pieces.iter().cloned());
        }
        out
    }
}

/// Joins subwords back into words. `<bos>`, `<eos>` and `<pad>` are
/// dropped; `<BT>` is dropped unless `keep_bt`. A trailing piece without
/// the end-of-word marker still forms a word.
pub fn decode_bpe(tokens: &[String], keep_bt: bool) -> Tokens {
    let mut out = Vec::new();
    let mut cur = String::new();
    for t in tokens {
        if is_reserved(t) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            let keep = match t.as_str() {
                BT_TOKEN => keep_bt,
                crate::special::UNK_TOKEN => true,
                _ => false,
            };
            if keep {
                out.push(t.clone());
            }
            continue;
        }
        match t.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                cur.push_str(stem);
                out.push(std::mem::take(&mut cur));
            }
            None => cur.push_str(t),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out.retain(|w| !w.is_empty());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split;
    use proptest::prelude::*;

    fn learn(text: &[&str], n: usize) -> BpeModel {
        let sents: Vec<Tokens> = text.iter().map(|s| split(s)).collect();
        learn_bpe(&[&sents], n).unwrap()
    }

    #[test]
    fn no_merges_splits_characters() {
        let m = learn(&["ab"], 0);
        assert!(m.merges().is_empty());
        assert_eq!(apply_bpe(&m, &split("ab")), ["a", "b</w>"]);
    }

    #[test]
    fn low_lower_first_merge() {
        // Hand count over {low: 2, lower: 1}: (l,o)=3, (o,w</w>)=2,
        // (o,w)=1, (w,e)=1, (e,r</w>)=1.
        let m = learn(&["low low lower"], 1);
        assert_eq!(m.merges(), [("l".to_string(), "o".to_string())]);
        let m = learn(&["low low lower"], 2);
        assert_eq!(m.merges()[1], ("lo".to_string(), "w</w>".to_string()));
        assert_eq!(apply_bpe(&m, &split("low lower")), ["low</w>", "lo", "w", "e", "r</w>"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        // (a,b) and (c,d) both occur twice.
        let m = learn(&["cd ab cd ab"], 1);
        assert_eq!(m.merges()[0], ("a".to_string(), "b</w>".to_string()));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let m = learn(&["abc"], 10);
        assert!(m.merges().is_empty());
        assert!(learn_bpe(&[], 3).is_err());
        assert!(learn_bpe(&[&[]], 3).is_err());
    }

    #[test]
    fn reserved_tokens_pass_through() {
        let m = learn(&["xy xy"], 5);
        assert_eq!(apply_bpe(&m, &split("<BT> xy")), ["<BT>", "xy</w>"]);
        assert_eq!(decode_bpe(&split("<BT> xy</w>"), false), ["xy"]);
        assert_eq!(decode_bpe(&split("<BT> xy</w>"), true), ["<BT>", "xy"]);
        assert_eq!(decode_bpe(&split("<bos> x y</w> <eos> <pad>"), false), ["xy"]);
    }

    #[test]
    fn unseen_words_are_segmented() {
        let m = learn(&["ab ab ab"], 5);
        assert_eq!(apply_bpe(&m, &split("ba")), ["b", "a</w>"]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bpe");
        let m = learn(&["low low lower newest newest widest"], 20);
        m.save(&path).unwrap();
        assert_eq!(BpeModel::load(&path).unwrap(), m);
        std::fs::write(&path, "bitrain-bpe v1\na b\na b\n").unwrap();
        assert!(BpeModel::load(&path).is_err());
        std::fs::write(&path, "nope\n").unwrap();
        assert!(BpeModel::load(&path).is_err());
    }

    fn sentences() -> impl Strategy<Value = Vec<Tokens>> {
        prop::collection::vec(prop::collection::vec("[a-e]{1,6}", 1..6), 1..12)
    }

    proptest! {
        #[test]
        fn decode_inverts_apply(corpus in sentences(), n in 0usize..40) {
            let m = learn_bpe(&[&corpus], n).unwrap();
            let mut seg = Segmenter::new(&m);
            for s in &corpus {
                let pieces = apply_bpe(&m, s);
                prop_assert_eq!(&seg.apply(s), &pieces);
                prop_assert_eq!(&decode_bpe(&pieces, false), s);
            }
        }

        #[test]
        fn learning_is_deterministic(corpus in sentences(), n in 0usize..40) {
            let a = learn_bpe(&[&corpus], n).unwrap().to_text();
            let mut rev = corpus.clone();
            rev.reverse();
            prop_assert_eq!(a, learn_bpe(&[&rev], n).unwrap().to_text());
        }

        #[test]
        fn pieces_come_from_model_symbols(corpus in sentences(), n in 0usize..40) {
            let m = learn_bpe(&[&corpus], n).unwrap();
            let mut known: BTreeSet<String> = m.merges().iter().map(|(a, b)| format!("{a}{b}")).collect();
            for s in &corpus {
                for w in s {
                    known.extend(initial_symbols(w));
                }
            }
            for s in &corpus {
                for p in apply_bpe(&m, s) {
                    prop_assert!(known.contains(&p), "{}", p);
                }
            }
        }
    }
}
