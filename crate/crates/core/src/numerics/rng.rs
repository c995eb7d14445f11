//! Deterministic splittable random number generator.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood's `splitmix64` update and
//! finalizer): a 64-bit counter advanced by the golden-gamma constant
//! `0x9E3779B97F4A7C15`, finalized by two xor-shift-multiply rounds. It is
//! used here not for statistical heroics but because it is tiny, fast, has a
//! single word of state, and — run through integer ops and [`libm`] only —
//! produces the same stream on every platform.
//!
//! Child streams are derived *functionally* from the parent's original seed
//! and a child index (or a name, hashed FNV-1a). Deriving a child never
//! consumes parent state, so the set of streams a run uses does not depend on
//! the order in which code asks for them.

use alloc::vec::Vec;

use super::fmath;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: one well-mixed 64-bit value from a counter word.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a 64-bit hash; used to turn stream names into child indices and for
/// content fingerprints elsewhere in the crate.
#[inline]
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Deterministic splittable RNG (SplitMix64 core).
#[derive(Debug, Clone, PartialEq)]
pub struct Rng {
    /// Seed this stream was created with; children derive from it, not from
    /// the advancing counter.
    seed: u64,
    /// Current counter word.
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, state: seed }
    }

    /// The seed this stream was constructed with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream `index` of this stream.
    ///
    /// Pure function of `(self.seed, index)`: deriving children in any order,
    /// before or after drawing from the parent, yields the same streams.
    pub fn child(&self, index: u64) -> Rng {
        Rng::new(mix64(
            self.seed ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        ))
    }

    /// Named child stream; the name is FNV-1a-hashed into a child index.
    pub fn named_child(&self, name: &str) -> Rng {
        self.child(fnv1a64(name.as_bytes()))
    }

    /// Next raw 64-bit draw.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Log-uniform draw in `[lo, hi)`; both bounds must be positive.
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        fmath::exp(self.uniform(fmath::ln(lo), fmath::ln(hi)))
    }

    /// Standard normal draw via Box-Muller (cosine branch only, so one draw
    /// consumes exactly two uniforms and no state is carried between calls).
    pub fn normal(&mut self) -> f64 {
        // 1 - u ∈ (0, 1] keeps the log argument away from zero.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        fmath::sqrt(-2.0 * fmath::ln(u1)) * fmath::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// True with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Unbiased uniform integer in `[0, n)` by rejection sampling.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Largest multiple of n that fits in u64; draws at or above it would
        // bias the modulo and are rejected.
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `count` standard normal draws.
    pub fn normals(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.normal()).collect()
    }
}
