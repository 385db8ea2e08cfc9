//! Seeded, splittable, counter-based random streams.
//!
//! Every source of randomness in the crate flows from a single seed through
//! named sub-streams ([`StreamKey::child`]), so any component (data
//! generation, parameter init, diffusion noise, evaluation) can be reproduced
//! in isolation. The generator itself is SplitMix64: a Weyl counter plus a
//! finalizing mix, so its entire state is one `u64` and serializes trivially.

use std::f64::consts::TAU;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// FNV-1a 64-bit hash. Also the hash behind the text embedder.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identity of a random stream. Keys are derived, never drawn from, so the
/// same key always yields the same stream regardless of call order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(mix(seed ^ GOLDEN))
    }

    /// Derive a named sub-stream.
    pub fn child(&self, label: &str) -> Self {
        StreamKey(mix(self.0 ^ fnv1a64(label.as_bytes())))
    }

    /// Derive an indexed sub-stream (e.g. one per trajectory or episode).
    pub fn child_idx(&self, idx: u64) -> Self {
        StreamKey(mix(self.0 ^ mix(idx.wrapping_add(GOLDEN))))
    }

    pub fn rng(&self) -> Rng {
        Rng { state: self.0 }
    }
}

/// SplitMix64 generator. State is the counter itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn from_state(state: u64) -> Self {
        Rng { state }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform on the half-open interval [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the half-open interval (0, 1]. Used where an exact-zero
    /// draw must be impossible (log sampling, reset-probability draws).
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in 0..n via multiply-shift.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (cosine branch; two draws per sample,
    /// no cached state, so the generator stays a single u64).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    pub fn normal3(&mut self) -> [f64; 3] {
        [self.normal(), self.normal(), self.normal()]
    }
}
