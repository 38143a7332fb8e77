//! Tiny deterministic random streams for the mock backends.
//!
//! The toy denoiser derives all of its material (initial latents, projection
//! weights, signal field) from [`SplitMix64`] streams keyed by hashes of the
//! run seed, the stage index, and token strings, so identical inputs always
//! reproduce identical runs without pulling a full RNG crate into this
//! `no_std` core.

/// SplitMix64 generator: one `u64` of state, full 2^64 period.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-1, 1)`.
    pub fn next_centered(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }

    /// Sum of three centered uniforms: bell-shaped on `[-3, 3)`, mean 0.
    pub fn next_bell(&mut self) -> f64 {
        self.next_centered() + self.next_centered() + self.next_centered()
    }
}

/// FNV-1a hash of a byte string, used to key per-token weight streams.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
