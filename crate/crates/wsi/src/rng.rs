//! Deterministic pseudo-random number generation.
//!
//! Weight init, synthetic clips, and every other seeded artifact use
//! SplitMix64 (Steele, Lea & Flood's mixer, the JDK `SplittableRandom`
//! finalizer). It is implemented here rather than pulled from a crate because
//! the byte-identity guarantees ("same seed, same model file") must survive
//! dependency upgrades.

/// SplitMix64 stream. Same seed, same sequence, on every platform.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    #[must_use]
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1), 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [-bound, bound].
    pub fn next_symmetric_f32(&mut self, bound: f32) -> f32 {
        ((self.next_f64() * 2.0 - 1.0) as f32) * bound
    }
}
