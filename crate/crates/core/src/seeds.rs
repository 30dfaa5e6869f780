//! Deterministic derivation of child seeds from a master seed.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named sub-streams so that, e.g., fold seeds never collide with rep seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Repetition = 1,
    Fold = 2,
    Partition = 3,
    Data = 4,
    TestData = 5,
    Fit = 6,
}

pub fn derive_seed(parent: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ (stream as u64).wrapping_mul(GOLDEN)).wrapping_add(index))
}
