//! Stateless seed derivation. Every random stream in the crate is keyed by
//! (master seed, run index, stream name) through a 64-bit hash, so adding
//! runs or streams never perturbs existing ones.

/// splitmix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives the seed for one named stream of one run.
pub fn derive_seed(master: u64, run_index: u64, stream: &str) -> u64 {
    let name = fnv1a64(stream.as_bytes());
    splitmix64(master ^ name.rotate_left(17) ^ run_index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
