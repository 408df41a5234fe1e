//! Counter-based dropout masks.
//!
//! Each mask bit is a pure function of (seed, tensor name, flat index), so
//! merges are reproducible regardless of parallel scheduling.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Uniform sample in [0, 1) for one element of one tensor.
pub fn unit_sample(seed: u64, tensor_name: &str, index: u64) -> f64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, tensor_name.as_bytes());
    h = fnv1a(h, &index.to_le_bytes());
    // 53 high-quality bits -> [0, 1)
    (splitmix64(h) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Whether the element at `index` survives dropout with probability `drop_prob`.
pub fn keep_element(seed: u64, tensor_name: &str, index: u64, drop_prob: f64) -> bool {
    unit_sample(seed, tensor_name, index) >= drop_prob
}
