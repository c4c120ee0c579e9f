//! Hashed whitespace-token n-gram features.

use xxhash_rust::xxh3::xxh3_64_with_seed;

pub const DEFAULT_BUCKETS: u64 = 1 << 18;
pub const DEFAULT_HASH_SEED: u64 = 0x5245_4c58_4641_5431;

/// Sparse vector as (feature index, value), ascending by index, no repeats.
pub type SparseVec = Vec<(u32, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingConfig {
    /// N-gram orders `min_order..=max_order`.
    pub min_order: u8,
    pub max_order: u8,
    pub buckets: u64,
    pub seed: u64,
}

impl Default for HashingConfig {
    fn default() -> Self {
        HashingConfig {
            min_order: 1,
            max_order: 2,
            buckets: DEFAULT_BUCKETS,
            seed: DEFAULT_HASH_SEED,
        }
    }
}

impl HashingConfig {
    pub fn is_valid(&self) -> bool {
        self.min_order >= 1
            && self.min_order <= self.max_order
            && self.buckets >= 1
            && self.buckets <= u32::MAX as u64 + 1
    }
}

/// Count features: each n-gram of whitespace tokens hashes (with its order
/// as a prefix) to one bucket.
pub fn featurize(text: &str, config: &HashingConfig) -> SparseVec {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut idx = Vec::new();
    let mut key = Vec::new();
    for order in config.min_order as usize..=config.max_order as usize {
        for gram in tokens.windows(order) {
            key.clear();
            key.push(order as u8);
            for tok in gram {
                key.push(0x1f);
                key.extend_from_slice(tok.as_bytes());
            }
            idx.push((xxh3_64_with_seed(&key, config.seed) % config.buckets) as u32);
        }
    }
    idx.sort_unstable();
    let mut out: SparseVec = Vec::with_capacity(idx.len());
    for i in idx {
        match out.last_mut() {
            Some((last, count)) if *last == i => *count += 1.0,
            _ => out.push((i, 1.0)),
        }
    }
    out
}
