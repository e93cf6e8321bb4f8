//! Packed bit vectors used for per-receiver probe columns.
//!
//! A probing experiment produces one bit per (probe, receiver); every
//! statistic in this crate reduces to OR/AND + popcount over such
//! columns, so the columns are stored as `u64` words.

const WORD_BITS: usize = 64;

/// A fixed-length bit vector packed into 64-bit words.
///
/// Bits past `len` are kept at zero, so popcounts over whole words are
/// always exact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitVec {
    len: usize,
    words: Vec<u64>,
}

impl BitVec {
    /// An all-zero vector of `len` bits.
    pub fn zeros(len: usize) -> Self {
        BitVec {
            len,
            words: vec![0; len.div_ceil(WORD_BITS)],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sets bit `i` to one. Panics if `i` is out of range.
    pub fn set(&mut self, i: usize) {
        assert!(
            i < self.len,
            "bit index {i} out of range (len {})",
            self.len
        );
        self.words[i / WORD_BITS] |= 1u64 << (i % WORD_BITS);
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(
            i < self.len,
            "bit index {i} out of range (len {})",
            self.len
        );
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// In-place union with another vector of the same length.
    pub fn or_assign(&mut self, other: &BitVec) {
        assert_eq!(self.len, other.len, "length mismatch in or_assign");
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            *w |= o;
        }
    }

    /// Popcount of the union of `vs` (all the same length, at least one).
    pub fn union_count(vs: &[&BitVec]) -> u64 {
        Self::combine_count(vs, 0, |acc, w| acc | w)
    }

    /// Popcount of the intersection of `vs` (all the same length, at least one).
    pub fn intersection_count(vs: &[&BitVec]) -> u64 {
        // Padding bits are zero in every operand, so starting from !0 is safe.
        Self::combine_count(vs, !0u64, |acc, w| acc & w)
    }

    fn combine_count(vs: &[&BitVec], init: u64, f: impl Fn(u64, u64) -> u64) -> u64 {
        assert!(!vs.is_empty(), "need at least one operand");
        let len = vs[0].len;
        assert!(vs.iter().all(|v| v.len == len), "length mismatch");
        (0..vs[0].words.len())
            .map(|i| {
                let w = vs.iter().fold(init, |acc, v| f(acc, v.words[i]));
                u64::from(w.count_ones())
            })
            .sum()
    }

    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }
}
