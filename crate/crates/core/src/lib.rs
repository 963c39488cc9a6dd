//! Elliptical and inverse elliptical Wishart distributions on symmetric
//! positive-definite matrices: densities, closed-form and Kronecker moments,
//! samplers, and goodness-of-fit tools.
//!
//! Vectorization is column-major throughout: `vec(M)[j * rows + i] = M[(i, j)]`.

pub mod distributions;
pub mod error;
pub mod fitting;
pub mod generators;
pub mod io;
pub mod kronecker;
pub mod linalg;
pub mod operator;
pub mod sampling;
pub mod verify;

pub use distributions::{
    coefficients, ew_log_pdf, ew_mean, ew_variance, iew_log_pdf, iew_mean, iew_variance, nw_inverse_moments,
    nw_moments, EwParams, MomentCoefficients,
};
pub use error::{Error, Result};
pub use fitting::{
    ecdf, fit_report, ks_two_sample, mle_t_wishart, mle_wishart, statistic, EcdfCurve, FitConfig, FitReport,
    KsResult, StatisticKind,
};
pub use generators::DensityGenerator;
pub use kronecker::{
    ew_kron_moment, iew_kron_moment, inverse_wishart_kron_moment, kron_moment, mc_kron_moment,
    rearrange_second_moment, wishart_kron_moment, MemoryBudget, DEFAULT_BUDGET_BYTES,
};
pub use linalg::{kron, unvec, vec, SpdMatrix};
pub use operator::{commutation_matrix, PermSumOperator, Permutation};
pub use sampling::{sample_ew, sample_iew, sample_many, sample_nw, sample_wishart_identity, EwSampler, SamplerMethod};
