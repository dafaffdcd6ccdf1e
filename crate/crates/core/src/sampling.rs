//! Reproducible uniform sampling on interval boxes.
//!
//! Every random scalar is addressed by `(seed, purpose, stream id, index)`.
//! The generator is ChaCha20 keyed by the master seed and a purpose tag, with
//! the stream id as the ChaCha stream (nonce) and the scalar index mapped to
//! the keystream word position (two 32-bit words per scalar). Any worker can
//! therefore materialize any scalar without touching shared state, and results
//! never depend on how work is split across threads.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::model::IntervalBox;

/// Master seed of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleSeed(pub u64);

/// Independent key spaces for the different consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Points of the state-control sample set; stream id = point index.
    RegionPoints = 1,
    /// Future-state samples of one state-control point; stream id = point index.
    FutureStates = 2,
    /// Level-set containment points.
    LevelSet = 3,
    /// Controller verification states; stream id = verification index.
    Verify = 4,
    /// Initial states of simulated trajectories; stream id = trajectory index.
    SimInitial = 5,
    /// Per-step noise of simulated trajectories; stream id = trajectory index.
    SimNoise = 6,
    /// Ad-hoc streams for callers outside the pipeline (tests, tools).
    User = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleStream {
    pub seed: SampleSeed,
    pub purpose: Purpose,
    pub id: u64,
}

impl SampleStream {
    pub fn new(seed: SampleSeed, purpose: Purpose, id: u64) -> Self {
        Self { seed, purpose, id }
    }

    /// Generator positioned at scalar index 0 of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.0.to_le_bytes());
        key[8..16].copy_from_slice(&(self.purpose as u64).to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(self.id);
        StreamRng { inner, drawn: 0 }
    }

    /// Generator positioned at scalar index `index`.
    pub fn rng_at(&self, index: u64) -> StreamRng {
        let mut rng = self.rng();
        rng.seek(index);
        rng
    }
}

/// Sequential reader over one stream; counts the scalars it hands out.
#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha20Rng,
    drawn: u64,
}

impl StreamRng {
    pub fn seek(&mut self, index: u64) {
        self.inner.set_word_pos(2 * index as u128);
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn next_unit(&mut self) -> f64 {
        self.drawn += 1;
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi]`; returns `lo` exactly when `lo == hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let r = self.next_unit();
        lo + (hi - lo) * r
    }

    /// One point uniform on the box `[lo, hi]` written into `out`.
    pub fn fill_uniform(&mut self, lo: &[f64], hi: &[f64], out: &mut [f64]) {
        for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
            *o = self.uniform(*l, *h);
        }
    }

    /// Scalars drawn through this reader.
    pub fn drawn(&self) -> u64 {
        self.drawn
    }
}

/// `count` points uniform on `b`, read sequentially from `stream`.
pub fn uniform_on_box(b: &IntervalBox, count: usize, stream: SampleStream) -> Vec<Vec<f64>> {
    let mut rng = stream.rng();
    (0..count)
        .map(|_| {
            let mut p = vec![0.0; b.dim()];
            rng.fill_uniform(b.lower(), b.upper(), &mut p);
            p
        })
        .collect()
}
