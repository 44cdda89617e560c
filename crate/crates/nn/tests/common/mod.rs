#![allow(dead_code, unused_imports)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use tactile_nn::gradcheck::{check_store, project, random_tensor, TOLERANCE};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
