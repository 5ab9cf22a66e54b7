//! Deterministic sub-seed derivation.
//!
//! Every randomized stage (scene generation, augmentation draws, attack
//! starts) gets its own stream derived from the run seed plus structural
//! coordinates (epoch, batch, sample index, purpose tag), so results never
//! depend on execution order or thread count.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a list of coordinates.
pub fn derive(base: u64, coords: &[u64]) -> u64 {
    let mut s = mix(base);
    for &c in coords {
        s = mix(s ^ c.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    s
}
