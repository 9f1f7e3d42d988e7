//! Deterministic payload generator shared by the producer guest and the
//! host-side oracles.
//!
//! A 64-bit LCG: `state = state * 6364136223846793005 + 1442695040888963407`
//! (wrapping), advanced once per byte, emitting the low byte of the new
//! state. The initial state is the seed.

use alloc::vec::Vec;

pub const LCG_MULTIPLIER: u64 = 6364136223846793005;
pub const LCG_INCREMENT: u64 = 1442695040888963407;

#[derive(Debug, Clone)]
pub struct PayloadGenerator {
    state: u64,
}

impl PayloadGenerator {
    pub fn new(seed: u64) -> Self {
        PayloadGenerator { state: seed }
    }

    pub fn next_byte(&mut self) -> u8 {
        self.state = self
            .state
            .wrapping_mul(LCG_MULTIPLIER)
            .wrapping_add(LCG_INCREMENT);
        self.state as u8
    }

    pub fn fill(&mut self, buf: &mut [u8]) {
        for b in buf {
            *b = self.next_byte();
        }
    }
}

/// `len` bytes from seed `seed`.
pub fn generate(seed: u64, len: usize) -> Vec<u8> {
    let mut out = alloc::vec![0u8; len];
    PayloadGenerator::new(seed).fill(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_bytes_seed_zero() {
        // state1 = 1442695040888963407 = 0x14057B7EF767814F
        // state2 = state1 * M + I (mod 2^64), low byte checked by hand below.
        let s1: u64 = LCG_INCREMENT;
        let s2 = s1.wrapping_mul(LCG_MULTIPLIER).wrapping_add(LCG_INCREMENT);
        assert_eq!(generate(0, 2), alloc::vec![0x4F, s2 as u8]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(generate(7, 4096), generate(7, 4096));
        assert_ne!(generate(7, 64), generate(8, 64));
        let long = generate(7, 1000);
        assert_eq!(&long[..100], generate(7, 100).as_slice());
    }
}
