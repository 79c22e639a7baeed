//! Named sub-seeds derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage seed for k-means initialisation.
pub const KMEANS: &str = "kmeans";
/// Stage seed for the ood-train / ood-val split.
pub const SPLIT: &str = "split";
/// Stage seed for random-forest training.
pub const FOREST: &str = "forest";
/// Stage seed for Shapley sampling.
pub const SHAP: &str = "shap";
/// Stage seed for the synthetic generator.
pub const SYNTH: &str = "synth";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stable sub-seed for a named stage (FNV-1a over the name, mixed
/// with the master seed).
pub fn derive(master: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}

/// Derives the seed of the `index`-th item (tree, sample, ...) of a stage.
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
