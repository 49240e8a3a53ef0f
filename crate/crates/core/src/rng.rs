//! Seeded, splittable random streams.
//!
//! Every outer iteration `k` and batch slot `w` owns an independent ChaCha8
//! stream derived from one run seed, so results do not depend on the order
//! in which batch slots are evaluated.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Generator type handed out by [`SeedStreams`].
pub type StreamRng = ChaCha8Rng;

const AUX_NAMESPACE: u64 = 0xFFFF_FFFF;

/// Factory of independent substreams keyed by `(k, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for outer iteration `k`, batch slot `w`. Both are truncated to
    /// 32 bits; `k = 0xFFFF_FFFF` is reserved for [`SeedStreams::auxiliary`].
    pub fn substream(&self, k: u64, w: u64) -> StreamRng {
        debug_assert!(k < AUX_NAMESPACE);
        self.with_stream(((k & 0xFFFF_FFFF) << 32) | (w & 0xFFFF_FFFF))
    }

    /// Stream outside the `(k, w)` grid, e.g. for initial-point sampling or
    /// Monte-Carlo diagnostics.
    pub fn auxiliary(&self, tag: u32) -> StreamRng {
        self.with_stream((AUX_NAMESPACE << 32) | u64::from(tag))
    }

    fn with_stream(&self, stream: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Uniform draw on `[0, 1)`; consumes exactly one `u64`.
pub fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Bernoulli(`q`) draw; consumes exactly one `u64` even when `q == 1`.
pub fn bernoulli<R: RngCore + ?Sized>(rng: &mut R, q: f64) -> bool {
    uniform01(rng) < q
}

/// Standard normal draw (ziggurat).
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
