//! Statistical primitives: special functions, distribution quantiles,
//! Gaussian sampling, and sample moments.

pub mod quantiles;
pub mod sampling;
pub mod special;

pub use quantiles::{
    chi2_cdf, chi2_quantile, f_cdf, f_quantile, hotelling_t2_quantile, norm_cdf, norm_inv_cdf,
    norm_pdf, student_t_cdf, student_t_quantile,
};
pub use sampling::{
    derive_seed, gaussian_draw, gaussian_draw_one, raw_mean_cov, rng_for, sample_moments,
    GaussianBelief, MomentEstimate, SampleSet, COV_CONDITION_FLOOR,
};
