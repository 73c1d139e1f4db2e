//! Seed derivation. All randomness in a pipeline run is a function of
//! `(base_seed, stage, index)`, so worker scheduling never changes results.

/// Pipeline stages that draw their own seed streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Solver = 1,
    Collect = 2,
    Split = 3,
    HyperTrain = 4,
    BaselineTrain = 5,
    Evaluate = 6,
    Maml = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stage: Stage, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stage as u64) ^ index)
}
