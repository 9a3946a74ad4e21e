use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Overwrites every parameter with N(0, std²) draws.
pub fn randomize(set: &mut ParamSet, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).unwrap();
    for p in set.iter_mut() {
        for v in p.value.data_mut() {
            *v = normal.sample(&mut rng);
        }
    }
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64, std: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).unwrap();
    let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}
