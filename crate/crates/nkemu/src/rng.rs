//! Deterministic random numbers for dataset generation.
//!
//! A counter-based generator (ChaCha12) keyed by a 64-bit seed, with one
//! independent stream per draw index, so batches regenerate bit-identically
//! from `(seed, index)` and can be produced in parallel by partitioning the
//! index range. Normal variates come from an explicit Box-Muller transform
//! on the raw uniform stream. Manifests record [`RNG_ALGORITHM`].

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

pub const RNG_ALGORITHM: &str = "chacha12/box-muller";

pub struct CounterRng {
    inner: ChaCha12Rng,
    /// Cached second output of the last Box-Muller pair.
    spare: Option<f64>,
}

impl CounterRng {
    /// Stream `stream` of the generator keyed by `seed`.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        CounterRng { inner, spare: None }
    }

    /// Uniform in (0, 1]: 53 mantissa bits, never zero so `ln` is safe.
    pub fn uniform(&mut self) -> f64 {
        (((self.inner.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
