use std::collections::VecDeque;

use crate::corpus::OriginTag;
use crate::error::{Error, Result};
use crate::model::EncodedPair;
use crate::rng::{label, SplitMix64};

/// Groups of pair indices forming one epoch.
///
/// Pairs are shuffled, stably sorted by padded width so that similar
/// lengths share a batch, cut greedily so that `batch_size × max width`
/// stays within `tokens_per_batch`, and the batch order is shuffled again.
pub fn make_batches(
    pairs: &[EncodedPair],
    tokens_per_batch: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    let all: Vec<usize> = (0..pairs.len()).collect();
    batches_over(pairs, &all, tokens_per_batch, seed, epoch)
}

fn batches_over(
    pairs: &[EncodedPair],
    subset: &[usize],
    tokens_per_batch: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if subset.is_empty() {
        return Err(Error::invalid("cannot batch an empty corpus"));
    }
    if let Some(&i) = subset.iter().find(|&&i| pairs[i].width() > tokens_per_batch) {
        return Err(Error::invalid(format!(
            "pair {i} needs {} padded tokens, more than tokens_per_batch {tokens_per_batch}",
            pairs[i].width()
        )));
    }
    let mut rng = SplitMix64::from_labels(seed, &[label("make_batches"), epoch]);
    let mut order = subset.to_vec();
    rng.shuffle(&mut order);
    order.sort_by_key(|&i| pairs[i].width());

    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut widest = 0;
    for i in order {
        let w = widest.max(pairs[i].width());
        if !cur.is_empty() && (cur.len() + 1) * w > tokens_per_batch {
            batches.push(std::mem::take(&mut cur));
            widest = 0;
        }
        widest = widest.max(pairs[i].width());
        cur.push(i);
    }
    batches.push(cur);
    rng.shuffle(&mut batches);
    Ok(batches)
}

/// Endless epoch-by-epoch batch sequence over one training corpus.
pub struct BatchStream<'a> {
    pairs: &'a [EncodedPair],
    tokens_per_batch: usize,
    seed: u64,
    epoch: u64,
    alternate: Option<(Vec<usize>, Vec<usize>)>,
    queue: VecDeque<Vec<usize>>,
}

impl<'a> BatchStream<'a> {
    /// With `alternate`, pairs tagged `original` and those tagged `swapped`
    /// are batched separately and the two directions strictly interleave.
    pub fn new(pairs: &'a [EncodedPair], tokens_per_batch: usize, seed: u64, alternate: bool) -> Result<Self> {
        let alternate = if alternate {
            let fwd: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].origin != OriginTag::Swapped).collect();
            let bwd: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].origin == OriginTag::Swapped).collect();
            if fwd.is_empty() || bwd.is_empty() {
                return Err(Error::invalid("strict alternation needs pairs in both directions"));
            }
            Some((fwd, bwd))
        } else {
            None
        };
        let mut stream = Self {
            pairs,
            tokens_per_batch,
            seed,
            epoch: 0,
            alternate,
            queue: VecDeque::new(),
        };
        stream.refill()?;
        Ok(stream)
    }

    fn refill(&mut self) -> Result<()> {
        let epoch = self.epoch;
        self.epoch += 1;
        match &self.alternate {
            None => {
                self.queue
                    .extend(make_batches(self.pairs, self.tokens_per_batch, self.seed, epoch)?);
            }
            Some((fwd, bwd)) => {
                let f = batches_over(self.pairs, fwd, self.tokens_per_batch, self.seed, epoch)?;
                let b = batches_over(self.pairs, bwd, self.tokens_per_batch, self.seed ^ 0x5bd1e995, epoch)?;
                let (mut f, mut b) = (f.into_iter(), b.into_iter());
                loop {
                    match (f.next(), b.next()) {
                        (None, None) => break,
                        (x, y) => self.queue.extend(x.into_iter().chain(y)),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn next_batch(&mut self) -> Result<Vec<usize>> {
        if self.queue.is_empty() {
            self.refill()?;
        }
        Ok(self.queue.pop_front().expect("refilled"))
    }

    pub fn pairs(&self) -> &'a [EncodedPair] {
        self.pairs
    }
}
