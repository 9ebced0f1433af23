use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::derive_seed;
use crate::{Error, Result};

/// Shuffled mini-batches of record indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Batcher {
    len: usize,
    batch_size: usize,
    seed: u64,
}

impl Batcher {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(Self { len, batch_size, seed })
    }

    /// Every index exactly once, shuffled per `(seed, epoch)`; the last
    /// batch may be short.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[epoch])));
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}
