//! Named, seedable random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for; keeps streams of different purposes disjoint
/// under the same seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Training = 2,
    Sampling = 3,
    Injection = 4,
    Animation = 5,
    SuperResolution = 6,
    Extractor = 7,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream for `(seed, purpose, item)` with a substream per scale index, so
/// draws for a given scale do not shift when the number of scales changes.
pub fn stream(seed: u64, purpose: Purpose, item: u64, scale: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(purpose as u64) ^ splitmix(item.wrapping_add(0x51)).rotate_left(17)));
    rng.set_stream(scale as u64);
    rng
}

pub fn std_normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}
