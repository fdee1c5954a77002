//! Counter-keyed random streams.
//!
//! Every draw in the crate comes from a [`RngStream`] addressed by
//! `(seed, run, step, purpose)`. The four words form the ChaCha20 key
//! directly, so a stream never depends on how many other streams were
//! consumed before it or on which thread consumes it.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. Inner-loop draws carry their iteration index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    InitialNoise,
    MeanInit,
    SgldNoise(u32),
    PriorNoise,
    ScoreNoise,
    MeasurementNoise,
    OperatorMask,
    OperatorKernel,
    Dataset,
    Custom(u32),
}

impl Purpose {
    fn code(self) -> u64 {
        let (tag, idx): (u64, u32) = match self {
            Purpose::InitialNoise => (1, 0),
            Purpose::MeanInit => (2, 0),
            Purpose::SgldNoise(k) => (3, k),
            Purpose::PriorNoise => (4, 0),
            Purpose::ScoreNoise => (5, 0),
            Purpose::MeasurementNoise => (6, 0),
            Purpose::OperatorMask => (7, 0),
            Purpose::OperatorKernel => (8, 0),
            Purpose::Dataset => (9, 0),
            Purpose::Custom(k) => (10, k),
        };
        (tag << 32) | u64::from(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub run: u64,
    pub step: u64,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub id: StreamId,
    zeroed: bool,
}

impl RngStream {
    pub fn new(seed: u64, run: u64, step: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            id: StreamId { run, step, purpose },
            zeroed: false,
        }
    }

    /// Same stream address but with a different purpose.
    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self {
            id: StreamId { purpose, ..self.id },
            ..self
        }
    }

    pub fn with_step(self, step: u64) -> Self {
        Self {
            id: StreamId { step, ..self.id },
            ..self
        }
    }

    /// Test hook: a stream whose Gaussian draws are all exactly zero.
    pub fn zeroed(self) -> Self {
        Self {
            zeroed: true,
            ..self
        }
    }

    pub fn is_zeroed(&self) -> bool {
        self.zeroed
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        let words = [self.seed, self.id.run, self.id.step, self.id.purpose.code()];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha20Rng::from_seed(key)
    }

    /// `n` i.i.d. standard normal draws.
    pub fn normals(&self, n: usize) -> Vec<f64> {
        if self.zeroed {
            return vec![0.0; n];
        }
        let mut rng = self.rng();
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}
