//! SplitMix64 generator and stable seed derivation.
//!
//! Every random choice in a campaign flows from one of these states, and each
//! trial's state is derived from the master seed plus the trial's axis indices.

use thiserror::Error;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("cannot draw an index from an empty range")]
pub struct EmptyRange;

/// The SplitMix64 output mixer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds trial indices into the master seed. `derive_seed(m, &[]) == m`.
pub fn derive_seed(master: u64, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(master, |h, &idx| mix64(h ^ idx.wrapping_add(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    state: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// `next_u64() mod n`.
    #[inline]
    pub fn index(&mut self, n: usize) -> Result<usize, EmptyRange> {
        if n == 0 {
            return Err(EmptyRange);
        }
        Ok((self.next_u64() % n as u64) as usize)
    }

    /// Top 24 bits scaled into `[0, 1)`; exactly representable in binary32.
    #[inline]
    pub fn unit(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u32 << 24) as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_zero_sequence() {
        // Reference values from an independent big-integer evaluation of the recurrence.
        let mut rng = RngState::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn index_of_one_is_zero() {
        let mut rng = RngState::new(99);
        for _ in 0..100 {
            assert_eq!(rng.index(1), Ok(0));
        }
        assert_eq!(rng.index(0), Err(EmptyRange));
    }

    #[test]
    fn unit_range_and_resolution() {
        let mut rng = RngState::new(3);
        for _ in 0..10_000 {
            let u = rng.unit();
            assert!((0.0..1.0).contains(&u));
            assert_eq!((u * 16_777_216.0).fract(), 0.0);
        }
    }

    #[test]
    fn derive_examples() {
        assert_eq!(derive_seed(0, &[0]), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive_seed(0, &[1]), 0x910A_2DEC_8902_5CC1);
        assert_eq!(derive_seed(12345, &[]), 12345);
        assert_eq!(derive_seed(7, &[1, 2, 3]), derive_seed(7, &[1, 2, 3]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
    }
}
