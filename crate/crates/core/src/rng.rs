//! Seeded pseudo-random numbers for dataset splits and synthetic sessions.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014): a 64-bit state
//! advanced by the golden-gamma increment `0x9E3779B97F4A7C15` and mixed with
//! the finalizer `z = (z ^ z>>30) * 0xBF58476D1CE4E5B9; z = (z ^ z>>27) *
//! 0x94D049BB133111EB; z ^ z>>31`. Every derived quantity below is defined in
//! terms of `next_u64`, so splits and generated sessions can be reproduced
//! bit-for-bit in any language:
//!
//! * `next_f64`: `(next_u64() >> 11) * 2^-53`, uniform in `[0, 1)`.
//! * `below(n)`: `(next_u64() as u128 * n) >> 64` (multiply-shift).
//! * `shuffle`: Fisher-Yates from the last index down, swapping `i` with
//!   `below(i + 1)`.
//! * `gaussian`: Box-Muller, `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`, one draw
//!   per call (the sine branch is discarded).

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(Self::GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Independent child stream, used to give each generated session its own seed.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }
}
