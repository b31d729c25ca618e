//! Seeded randomness shared by every sampling operation.
//!
//! The generator is SplitMix64 used in counter mode: draw `i` of stream
//! `key` is `mix(key + (i + 1) * 0x9E3779B97F4A7C15)` where `mix` is the
//! SplitMix64 finalizer. Streams are derived from a user seed and a list of
//! labels with [`derive_key`], so independent consumers (shuffling, dropout,
//! corpus sampling) never share draws. Bounded integers use Lemire's
//! multiply-and-reject method; floats take the top 53 bits. All of this is
//! fixed here so a seed reproduces the same corpora and batches in any
//! implementation that follows these rules.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds labels into a seed to name an independent stream.
pub fn derive_key(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix64(seed ^ GOLDEN), |acc, &l| mix64(acc ^ mix64(l.wrapping_add(GOLDEN))))
}

/// Stable 64-bit label for a string tag.
pub fn label(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Random access into a stream: the `index`-th draw for `key`.
#[inline]
pub fn draw_at(key: u64, index: u64) -> u64 {
    mix64(key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    key: u64,
    counter: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { key: seed, counter: 0 }
    }

    pub fn from_labels(seed: u64, labels: &[u64]) -> Self {
        Self::new(derive_key(seed, labels))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = draw_at(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` in selection order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}
