//! Root-seed splitting.
//!
//! Every experiment takes one root seed; per-module seeds are derived with a
//! SplitMix64 step over the root xored with a role tag, so changing one
//! module's role never perturbs another module's stream.

/// Stable role tags for seed derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedRole {
    Workload,
    ModelInit,
    TrainShuffle,
    Dropout,
    Split,
}

impl SeedRole {
    fn tag(self) -> u64 {
        match self {
            SeedRole::Workload => 0x776b_6c64,
            SeedRole::ModelInit => 0x6d69_6e69,
            SeedRole::TrainShuffle => 0x7368_7566,
            SeedRole::Dropout => 0x6472_6f70,
            SeedRole::Split => 0x7370_6c74,
        }
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives the seed for `role` from the experiment's root seed.
pub fn derive_seed(root: u64, role: SeedRole) -> u64 {
    splitmix64(root ^ role.tag().rotate_left(32))
}

/// Derives an indexed seed (e.g. one per workload or per config).
pub fn derive_indexed_seed(root: u64, role: SeedRole, index: u64) -> u64 {
    splitmix64(derive_seed(root, role).wrapping_add(index.wrapping_mul(0xa076_1d64_78bd_642f)))
}
