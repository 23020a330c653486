//! Fixtures shared by the benchmarks.

use kroncov::harness::ExperimentConfig;
use kroncov::sampler::{sample_matrix_normal, SampleCov};
use kroncov::KroneckerModel;

/// Example 1 style model at the given size.
pub fn model(p: usize, f: usize) -> KroneckerModel {
    ExperimentConfig {
        p,
        f,
        ..ExperimentConfig::default()
    }
    .fixed_model()
    .expect("model generation")
}

/// Factored sample covariance of `n` draws from [`model`].
pub fn sample(p: usize, f: usize, n: usize) -> SampleCov {
    let m = model(p, f);
    let data = sample_matrix_normal(&m, n, 1).expect("sampling");
    SampleCov::from_data(&data, p, f).expect("sample covariance")
}
