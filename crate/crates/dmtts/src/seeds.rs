//! Deterministic seed derivation and the shared base-pair hash.
//!
//! Every random draw in the crate flows from a user-visible 64-bit seed
//! through [`derive_seed`], so any component can be regenerated in isolation
//! and bit-identically. The mixing function is splitmix64, which is cheap and
//! has full avalanche.

/// One splitmix64 step: advances `state` and returns the next output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed for a named stream of `base`.
///
/// Distinct `stream` values yield statistically independent seeds; the same
/// pair always yields the same seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut s = base ^ stream.wrapping_mul(0xa076_1d64_78bd_642f);
    let a = splitmix64(&mut s);
    let b = splitmix64(&mut s);
    a ^ b.rotate_left(32)
}

/// Stream tags for [`derive_seed`]. Kept in one place so no two call sites
/// collide.
pub mod streams {
    pub const DIALECT_TABLE: u64 = 1;
    pub const SPEAKER: u64 = 2;
    pub const UTTERANCE: u64 = 3;
    pub const PARAM_INIT: u64 = 4;
    pub const TRAIN_STAGE: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const ROLLOUT: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const BENCH: u64 = 9;
}

/// Deterministic hash of an ordered base-class pair, shared by the
/// transducer, the speaker signature, and the waveform renderer.
///
/// The timbre variant of a rendered word is `(pair_hash(b1, b2) + offset) % G`;
/// all three consumers must agree on this function exactly.
pub fn pair_hash(b1: u32, b2: u32) -> u64 {
    let mut s = ((b1 as u64) << 32) | (b2 as u64 ^ 0x9e37_79b9);
    let a = splitmix64(&mut s);
    splitmix64(&mut s) ^ a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic() {
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
        assert_ne!(derive_seed(42, 7), derive_seed(42, 8));
        assert_ne!(derive_seed(42, 7), derive_seed(43, 7));
    }

    #[test]
    fn pair_hash_is_order_sensitive() {
        assert_ne!(pair_hash(1, 2), pair_hash(2, 1));
        assert_eq!(pair_hash(3, 9), pair_hash(3, 9));
    }

    #[test]
    fn pair_hash_spreads_residues() {
        // Residues mod small G should hit every class over a modest pair grid.
        let g = 4u64;
        let mut seen = [false; 4];
        for b1 in 0..8 {
            for b2 in 0..8 {
                seen[(pair_hash(b1, b2) % g) as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
