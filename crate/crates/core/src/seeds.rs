//! Counter-based seed derivation so that trial `i` gets the same random
//! stream regardless of scheduling.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of counters/tags.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |h, &k| splitmix64(h ^ splitmix64(k)))
}

pub const TAG_CALIBRATION: u64 = 0xCA11;
pub const TAG_VALIDATION: u64 = 0x7A11;
pub const TAG_TRIAL: u64 = 0x7121;
pub const TAG_NOISE: u64 = 1;
pub const TAG_GAINS: u64 = 2;
