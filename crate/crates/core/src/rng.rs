//! Counter-based random number generation.
//!
//! Every draw is a pure function of a root seed plus a counter path
//! (domain tag, coordinate index, step index, slot). There is no mutable
//! generator state, so parallel evaluation order cannot change any output
//! and a single configured event cannot shift the draws of unrelated
//! coordinates or steps.

/// Domain tags keep independent uses of one seed from colliding.
pub mod domain {
    pub const FROZEN: u64 = 0x01;
    pub const FRESH: u64 = 0x02;
    pub const WIGNER: u64 = 0x03;
    pub const BOOTSTRAP: u64 = 0x04;
    pub const TRIAL: u64 = 0x05;
    pub const THETA: u64 = 0x06;
    pub const NOISE: u64 = 0x07;
    pub const OBJECTIVE: u64 = 0x08;
    pub const SCENARIO: u64 = 0x09;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. Full-avalanche bijection on u64.
#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless counter RNG keyed by a 64-bit seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng {
            key: finalize(seed.wrapping_add(GOLDEN)),
        }
    }

    /// Derive a child generator; children with different tags are independent streams.
    pub fn stream(&self, tag: u64) -> Self {
        CounterRng {
            key: finalize(self.key.wrapping_add(GOLDEN) ^ tag),
        }
    }

    /// Raw 64-bit draw at a counter path.
    #[inline]
    pub fn bits(&self, ctr: &[u64]) -> u64 {
        let mut h = self.key;
        for &w in ctr {
            h = finalize(h.wrapping_add(GOLDEN) ^ w);
        }
        h
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn uniform(&self, ctr: &[u64]) -> f64 {
        (self.bits(ctr) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe as a logarithm argument.
    #[inline]
    pub fn uniform_open(&self, ctr: &[u64]) -> f64 {
        ((self.bits(ctr) >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fair sign draw, -1.0 or +1.0.
    #[inline]
    pub fn sign(&self, ctr: &[u64]) -> f64 {
        if self.bits(ctr) >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Standard normal via Box-Muller on two sub-draws of the counter path.
    #[inline]
    pub fn normal(&self, ctr: &[u64]) -> f64 {
        let mut h = self.key;
        for &w in ctr {
            h = finalize(h.wrapping_add(GOLDEN) ^ w);
        }
        let u1 = (((finalize(h.wrapping_add(GOLDEN)) >> 11) + 1) as f64)
            * (1.0 / (1u64 << 53) as f64);
        let u2 = ((finalize(h.wrapping_add(GOLDEN.wrapping_mul(2))) >> 11) as f64)
            * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Index in 0..bound (bound > 0), by 128-bit multiply reduction.
    #[inline]
    pub fn index(&self, ctr: &[u64], bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.bits(ctr) as u128 * bound as u128) >> 64) as usize
    }
}
