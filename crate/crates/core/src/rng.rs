//! Seeded, stream-separated random source.
//!
//! Every consumer draws from ChaCha20 keyed by the run seed, with the
//! 64-bit stream id selecting an independent keystream. ChaCha is a
//! counter-based generator with a fixed specification, so a given
//! `(seed, stream, call sequence)` produces the same values on every
//! platform.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Well-known consumers. Each gets its own keystream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Dropout = 2,
    Shuffle = 3,
    NegativeSampling = 4,
    Split = 5,
    Embedding = 6,
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self::with_stream_id(seed, stream as u64)
    }

    pub fn with_stream_id(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// Stream for a numbered sub-task (grid cell, matrix cell) of a consumer.
    /// The low byte keeps the consumer id, the rest carries the cell id.
    pub fn for_cell(seed: u64, stream: Stream, cell: u64) -> Self {
        Self::with_stream_id(seed, (cell + 1) << 8 | stream as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform index in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Access to the underlying generator for `rand` distributions.
    pub fn inner_mut(&mut self) -> &mut ChaCha20Rng {
        &mut self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::new(7, Stream::Init);
        let mut b = Rng::new(7, Stream::Init);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ_in_first_draws() {
        let streams = [
            Stream::Init,
            Stream::Dropout,
            Stream::Shuffle,
            Stream::NegativeSampling,
            Stream::Split,
            Stream::Embedding,
        ];
        let draws: Vec<Vec<u64>> = streams
            .iter()
            .map(|&s| {
                let mut r = Rng::new(42, s);
                (0..16).map(|_| r.next_u64()).collect()
            })
            .collect();
        for i in 0..draws.len() {
            for j in i + 1..draws.len() {
                assert!(draws[i].iter().zip(&draws[j]).all(|(a, b)| a != b));
            }
        }
    }

    #[test]
    fn cell_streams_are_distinct() {
        let mut a = Rng::for_cell(1, Stream::Init, 0);
        let mut b = Rng::for_cell(1, Stream::Init, 1);
        let mut c = Rng::new(1, Stream::Init);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert!(x != y && y != z && x != z);
    }

    #[test]
    fn known_first_value_is_stable() {
        // Frozen from ChaCha20 keyed by seed_from_u64(0), stream 1.
        let mut r = Rng::new(0, Stream::Init);
        assert_eq!(r.next_u64(), 4805290024704326708);
    }
}
