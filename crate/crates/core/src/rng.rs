//! Seed expansion.
//!
//! Every random draw in the crate comes from a single root seed. A
//! [`SeedTree`] derives independent ChaCha8 streams from it: the 256-bit key
//! is `root (u64 LE) || domain (u64 LE) || 0u128`, and the ChaCha stream id is
//! the caller-supplied index. The generator is therefore counter based and
//! splittable, and any implementation of ChaCha8 reproduces the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Human-readable description written into run manifests.
pub const GENERATOR_SPEC: &str =
    "chacha8; key = root_u64_le || domain_u64_le || zero_u128; stream = index";

/// Stream domains. Values are part of the fixture format and must not change.
pub mod domain {
    pub const TEXTURE: u64 = 1;
    pub const MASK: u64 = 2;
    pub const AFFINE: u64 = 3;
    pub const RANSAC: u64 = 4;
    pub const FEATURES: u64 = 5;
    pub const VIDEO: u64 = 6;
    pub const TEST: u64 = 0xFFFF;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, domain: u64, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.root.to_le_bytes());
        key[8..16].copy_from_slice(&domain.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}
