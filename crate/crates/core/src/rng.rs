//! Reproducible random streams.
//!
//! Every random draw comes from ChaCha8 keyed by a 64-bit seed and a stream
//! number. Cell seeds are derived by hashing the base seed with the cell's
//! coordinates, so any `(d, n, replicate)` cell can be regenerated on its own
//! regardless of sweep order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes that must never share random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Design = 1,
    Noise = 2,
    Test = 3,
}

/// Generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one cell, mixing the base seed with each coordinate in order.
pub fn cell_seed(base: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix(base), |acc, c| splitmix(acc ^ splitmix(*c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = stream_rng(7, Stream::Noise).random_iter().take(4).collect();
        let b: Vec<u64> = stream_rng(7, Stream::Noise).random_iter().take(4).collect();
        let c: Vec<u64> = stream_rng(7, Stream::Design).random_iter().take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn cell_seeds_depend_on_every_coordinate() {
        let base = cell_seed(1, &[20, 89, 0]);
        assert_eq!(base, cell_seed(1, &[20, 89, 0]));
        assert_ne!(base, cell_seed(2, &[20, 89, 0]));
        assert_ne!(base, cell_seed(1, &[40, 89, 0]));
        assert_ne!(base, cell_seed(1, &[20, 89, 1]));
        assert_ne!(cell_seed(1, &[1, 2]), cell_seed(1, &[2, 1]));
    }
}
