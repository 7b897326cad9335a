//! Stable derivation of per-run seeds from a master seed and labeled path.

use serde::{Deserialize, Serialize};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collision-resistant 64-bit seed from a master seed and a labeled path
/// such as `[("rep", 1), ("trial", 4), ("init", 0)]`. Platform-stable.
pub fn derive_seed(master_seed: u64, labels: &[(&str, u64)]) -> u64 {
    let mut h = fnv(FNV_OFFSET, &master_seed.to_le_bytes());
    for (name, index) in labels {
        h = fnv(h, name.as_bytes());
        h = fnv(h, &[0xff]);
        h = fnv(h, &index.to_le_bytes());
        h = fnv(h, &[0xfe]);
    }
    splitmix(h)
}

/// The seeds one training run consumes, recorded for reproducibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    /// Dataset generation (colors, rotations, sharding).
    pub data: u64,
    /// Per-domain 80/20 splits.
    pub split: u64,
    /// Weight initialization.
    pub init: u64,
    /// Minibatch sampling and in-training randomness.
    pub train: u64,
}
