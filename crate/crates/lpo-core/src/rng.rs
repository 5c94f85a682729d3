//! Deterministic random number generation.
//!
//! All randomness in the crate flows from [`SplitMix64`], a 64-bit
//! counter-based generator: the state advances by a fixed odd constant and
//! each output is a bijective mix of the counter. It is seeded explicitly
//! everywhere, has no platform-dependent behavior, and therefore makes
//! sampled outputs reproducible bit-for-bit across machines.
//!
//! Pipelines that need several independent streams derive labeled sub-seeds
//! from one root seed with [`derive_seed`], so a single seed reproduces an
//! entire run.

/// Golden-ratio increment used by the SplitMix64 counter.
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator (Steele, Lea & Flood's mix on a Weyl counter).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    /// Creates a generator from a 64-bit seed.
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform double in [0, 1), using the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform double in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Uses rejection sampling, so the result is
    /// exactly uniform and identical on every platform. Panics if n = 0.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Bernoulli draw with probability p.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 output mixer (a bijection on u64).
#[inline]
fn mix(z: u64) -> u64 {
    let mut z = z;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a byte string, used for stable label hashing.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives a labeled sub-seed from a root seed.
///
/// Distinct (label, index) combinations give independent streams, and the
/// derivation is a fixed pure function, so one root seed reproduces every
/// random decision in a pipeline.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    mix(root ^ fnv1a(label.as_bytes()) ^ index.wrapping_mul(GAMMA))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_stream() {
        let mut a = SplitMix64::new(12345);
        let mut b = SplitMix64::new(12345);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn known_splitmix_values() {
        // Reference outputs for seed 0 of the standard SplitMix64.
        let mut r = SplitMix64::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut r = SplitMix64::new(7);
        for _ in 0..1000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn next_below_bounds_and_coverage() {
        let mut r = SplitMix64::new(3);
        let mut seen = [false; 5];
        for _ in 0..500 {
            seen[r.next_below(5)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn derive_seed_separates_labels_and_indices() {
        let s = 42;
        assert_ne!(derive_seed(s, "a", 0), derive_seed(s, "b", 0));
        assert_ne!(derive_seed(s, "a", 0), derive_seed(s, "a", 1));
        assert_eq!(derive_seed(s, "a", 3), derive_seed(s, "a", 3));
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut r = SplitMix64::new(9);
        let mut v: alloc::vec::Vec<u32> = (0..50).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<alloc::vec::Vec<u32>>());
    }
}
