//! Deterministic derivation of independent RNG streams from a master seed.
//!
//! Every stochastic component (environment scenario selection, per-agent
//! network init and noise, scenario pools) gets its own substream so that
//! runs are reproducible and streams stay decorrelated.

/// One round of splitmix64; a cheap, well-mixed 64-bit permutation.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive the seed of a named substream from a master seed.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    splitmix64(master.wrapping_add(splitmix64(salt)))
}

/// Fixed salts for the substreams used across the workspace.
pub mod salt {
    /// Environment scenario-selection stream.
    pub const ENV: u64 = 0xE0;
    /// Per-agent stream; add the agent id.
    pub const AGENT: u64 = 0xA000;
    /// Training scenario pool.
    pub const TRAIN_POOL: u64 = 0x70_01;
    /// Held-out test scenario pool (disjoint from the training stream).
    pub const TEST_POOL: u64 = 0x70_02;
}
