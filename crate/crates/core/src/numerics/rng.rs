// SPDX-License-Identifier: Apache-2.0

//! Counter-based random streams keyed by a base seed and a list of tags.
//!
//! Each `(seed, tags)` pair selects an independent ChaCha stream, so a grid
//! cell draws the same numbers regardless of which cells ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit digest of a tag list.
pub fn mix_tags(tags: &[u64]) -> u64 {
    tags.iter()
        .fold(0x2545_F491_4F6C_DD1D, |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mix_tags(tags));
    rng
}
