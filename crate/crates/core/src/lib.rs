//! Kronecker-structured covariance estimation: KGlasso, flip-flop and baselines.
// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod glasso;
pub mod harness;
pub mod io;
pub mod matkit;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use estimators::{
    ff_estimate, ff_thres, glasso_full, kglasso, objective_j, schedule, EstimateResult, PenaltyPlan, ScheduleMode,
};
pub use harness::{run_example, EstimatorKind, ExperimentConfig, RmseReport};
pub use glasso::{glasso_solve, GlassoOptions, GlassoSolution};
pub use matkit::SpdMatrix;
pub use sampler::{sample_cov, sample_matrix_normal, KroneckerModel, SampleCov};
