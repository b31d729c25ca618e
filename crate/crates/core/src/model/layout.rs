use std::ops::Range;

use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Weight stored `in × out` so `y = x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LinearSpans {
    pub w: Span,
    pub b: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NormSpans {
    pub g: Span,
    pub b: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttnSpans {
    pub q: LinearSpans,
    pub k: LinearSpans,
    pub v: LinearSpans,
    pub o: LinearSpans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct FfnSpans {
    pub norm: NormSpans,
    pub up: LinearSpans,
    pub down: LinearSpans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EncLayerSpans {
    pub attn_norm: NormSpans,
    pub attn: AttnSpans,
    pub ffn: FfnSpans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DecLayerSpans {
    pub self_norm: NormSpans,
    pub self_attn: AttnSpans,
    pub cross_norm: NormSpans,
    pub cross_attn: AttnSpans,
    pub ffn: FfnSpans,
}

/// Names and offsets of every tensor in the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub total: usize,
    pub(crate) embed: Span,
    pub(crate) enc: Vec<EncLayerSpans>,
    pub(crate) enc_norm: NormSpans,
    pub(crate) dec: Vec<DecLayerSpans>,
    pub(crate) dec_norm: NormSpans,
    names: Vec<(String, Span)>,
}

struct Builder {
    offset: usize,
    names: Vec<(String, Span)>,
}

impl Builder {
    fn span(&mut self, name: String, rows: usize, cols: usize) -> Span {
        let s = Span {
            offset: self.offset,
            rows,
            cols,
        };
        self.offset += rows * cols;
        self.names.push((name, s));
        s
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) -> LinearSpans {
        LinearSpans {
            w: self.span(format!("{prefix}.w"), din, dout),
            b: self.span(format!("{prefix}.b"), 1, dout),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormSpans {
        NormSpans {
            g: self.span(format!("{prefix}.g"), 1, d),
            b: self.span(format!("{prefix}.b"), 1, d),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnSpans {
        AttnSpans {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnSpans {
        FfnSpans {
            norm: self.norm(&format!("{prefix}.norm"), d),
            up: self.linear(&format!("{prefix}.up"), d, f),
            down: self.linear(&format!("{prefix}.down"), f, d),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let mut b = Builder {
            offset: 0,
            names: Vec::new(),
        };
        let embed = b.span("embed".into(), c.vocab_size, d);
        let enc = (0..c.n_enc_layers)
            .map(|l| EncLayerSpans {
                attn_norm: b.norm(&format!("enc.{l}.attn_norm"), d),
                attn: b.attn(&format!("enc.{l}.attn"), d),
                ffn: b.ffn(&format!("enc.{l}.ffn"), d, c.d_ffn),
            })
            .collect();
        let enc_norm = b.norm("enc.norm", d);
        let dec = (0..c.n_dec_layers)
            .map(|l| DecLayerSpans {
                self_norm: b.norm(&format!("dec.{l}.self_norm"), d),
                self_attn: b.attn(&format!("dec.{l}.self_attn"), d),
                cross_norm: b.norm(&format!("dec.{l}.cross_norm"), d),
                cross_attn: b.attn(&format!("dec.{l}.cross_attn"), d),
                ffn: b.ffn(&format!("dec.{l}.ffn"), d, c.d_ffn),
            })
            .collect();
        let dec_norm = b.norm("dec.norm", d);
        Layout {
            total: b.offset,
            embed,
            enc,
            enc_norm,
            dec,
            dec_norm,
            names: b.names,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, Span)> {
        self.names.iter().map(|(n, s)| (n.as_str(), *s))
    }

    pub fn find(&self, name: &str) -> Option<Span> {
        self.names.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    /// Name of the tensor holding flat index `i`.
    pub fn owner(&self, i: usize) -> Option<&str> {
        self.names
            .iter()
            .find(|(_, s)| s.range().contains(&i))
            .map(|(n, _)| n.as_str())
    }
}
