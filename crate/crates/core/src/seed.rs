//! Labeled seed derivation.
//!
//! One master seed drives an entire experiment. Every consumer derives its own
//! stream from `(master, label, index)` so that adding a consumer never shifts
//! the randomness seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let a = splitmix64(master ^ fnv1a(label));
    splitmix64(a ^ splitmix64(index))
}

pub fn rng_for(master: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, label, index))
}
