#![allow(dead_code)]

pub mod oracle;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use kroncov::rng::rng_from_seed;

/// `G G^T / m + 0.05 I` with `G` a `d x m` standard normal matrix.
pub fn random_spd(d: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let g = DMatrix::from_fn(d, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    &g * g.transpose() / m as f64 + DMatrix::identity(d, d) * 0.05
}
