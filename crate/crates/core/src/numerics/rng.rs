use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Real, Tensor};

/// Seeded generator that can derive independent child streams by label,
/// so each layer's initialisation does not depend on construction order.
#[derive(Clone, Debug)]
pub struct SeedRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, label: &str) -> SeedRng {
        let mut h = splitmix64(self.seed);
        for b in label.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        SeedRng::new(h)
    }

    pub fn split_index(&self, i: u64) -> SeedRng {
        SeedRng::new(splitmix64(self.seed ^ splitmix64(i.wrapping_add(0x9E37))))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn xavier<T: Real>(&mut self, fan_in: usize, fan_out: usize) -> Tensor<T> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(self.rng.gen_range(-bound..bound)))
            .collect();
        Tensor::from_parts(vec![fan_in, fan_out], data)
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
