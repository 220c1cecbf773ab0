//! Concentration radii for sample moments and the robustified half-space.
//!
//! Given `N_s` i.i.d. Gaussian draws with unknown moments, the sample mean
//! and covariance carry estimation error. Two radii bound that error with
//! confidence `1 - beta` each:
//!
//! - `r1` bounds the mean error: ||mu - mu_hat|| <= r1, from the Hotelling
//!   T-squared distribution of the standardized mean error, relaxed through
//!   the largest covariance eigenvalue.
//! - `r2` bounds the covariance error along any direction:
//!   |x^T (Sigma - Sigma_hat) x| <= r2 * x^T Sigma_hat x, from the chi-square
//!   distribution of a fixed quadratic form under a Wishart sample covariance.
//!
//! Folding both into a tightened half-space yields a constraint that implies
//! the exact-moment chance constraint with probability at least `1 - 2 beta`:
//!
//! ```text
//! Psi^{-1}(1-eps) sqrt(1+r2) ||Sigma_hat^{1/2} x|| + r1 ||x|| <= mu_hat^T x
//! ```

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::stats::{
    chi2_quantile, gaussian_draw, hotelling_t2_quantile, norm_inv_cdf, student_t_quantile,
    GaussianBelief, MomentEstimate,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!(
            "confidence parameter beta must lie in (0, 1), got {beta}"
        )));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::RiskDomain(format!(
            "per-constraint risk must lie in (0, 0.5), got {eps}"
        )));
    }
    Ok(())
}

/// Mean-estimation radius: with probability at least `1 - beta`,
/// ||mu - mu_hat||_2 <= r1.
///
/// r1 = sqrt( T2_{n, N_s - 1}(1 - beta) * lambda_max(Sigma_hat) / N_s ).
/// The smallest eigenvalue of `Sigma_hat^{-1}` is taken as
/// `1 / lambda_max(Sigma_hat)`; no explicit inverse is formed.
/// Requires `N_s - 1 > n`.
pub fn mean_bound_r1(est: &MomentEstimate, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let n = est.dim();
    let m = est.n_samples.saturating_sub(1);
    let t2 = hotelling_t2_quantile(n, m, 1.0 - beta)?;
    Ok((t2 * est.lambda_max() / est.n_samples as f64).sqrt())
}

/// Covariance-estimation radius: with probability at least `1 - beta`, for a
/// fixed direction x, |x^T (Sigma - Sigma_hat) x| <= r2 * x^T Sigma_hat x.
///
/// r2 = max( |1 - (N_s-1)/chi2_{N_s-1, 1-beta/2}|,
///           |1 - (N_s-1)/chi2_{N_s-1, beta/2}| ).
pub fn cov_bound_r2(n_samples: usize, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if n_samples < 2 {
        return Err(Error::DegenerateDof(format!(
            "cov_bound_r2 needs at least 2 samples, got {n_samples}"
        )));
    }
    let k = (n_samples - 1) as f64;
    let hi = chi2_quantile(k, 1.0 - 0.5 * beta)?;
    let lo = chi2_quantile(k, 0.5 * beta)?;
    Ok((1.0 - k / hi).abs().max((1.0 - k / lo).abs()))
}

/// A tightened half-space built from sample moments.
///
/// Feasibility of a point x (homogeneous coordinates included by the caller)
/// means `||cov_sqrt_scaled x|| + r1 ||x|| <= mean_hat . x`; a big-M binary
/// may be added on the right by constraint assembly.
#[derive(Debug, Clone)]
pub struct RobustHalfSpace {
    pub mean_hat: DVector<f64>,
    /// `Psi^{-1}(1 - epsilon) * sqrt(1 + r2) * Sigma_hat^{1/2}`.
    pub cov_sqrt_scaled: DMatrix<f64>,
    pub r1: f64,
    pub r2: f64,
    pub epsilon: f64,
}

impl RobustHalfSpace {
    /// Feasibility margin at a point: right-hand side minus left-hand side
    /// (nonnegative iff the tightened constraint holds).
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        self.mean_hat.dot(x) - (&self.cov_sqrt_scaled * x).norm() - self.r1 * x.norm()
    }
}

/// Tighten an estimated half-space so that it implies the exact-moment
/// constraint at risk `eps` with probability at least `1 - 2 beta` over the
/// sampling of the estimate.
pub fn robustify_halfspace(
    est: &MomentEstimate,
    eps: f64,
    beta: f64,
) -> Result<RobustHalfSpace> {
    check_eps(eps)?;
    let r1 = mean_bound_r1(est, beta)?;
    let r2 = cov_bound_r2(est.n_samples, beta)?;
    let scale = norm_inv_cdf(1.0 - eps)? * (1.0 + r2).sqrt();
    Ok(RobustHalfSpace {
        mean_hat: est.mean_hat.clone(),
        cov_sqrt_scaled: est.cov_sqrt() * scale,
        r1,
        r2,
        epsilon: eps,
    })
}

/// Exact-moment feasibility margin for comparison paths:
/// `mu . x - Psi^{-1}(1-eps) ||Sigma^{1/2} x||`.
pub fn exact_halfspace_margin(belief: &GaussianBelief, eps: f64, x: &DVector<f64>) -> Result<f64> {
    check_eps(eps)?;
    let psi = norm_inv_cdf(1.0 - eps)?;
    Ok(belief.mean.dot(x) - psi * (psd_sqrt(&belief.cov) * x).norm())
}

/// One-dimensional pathology demo: minimal x with Pr(x >= delta) >= 1 - eps
/// for delta ~ N(mu, sigma^2) with known sigma and unknown mean.
///
/// Returns `(naive, robust)` where
/// - naive  = mu_hat + Psi^{-1}(1-eps) sigma       (plug-in; violates the
///   true constraint whenever mu_hat < mu, i.e. with probability 1/2), and
/// - robust = naive + t_{N_s-1, 1-beta} sigma / sqrt(N_s)  (one-sided
///   t-bound on the mean error; violates with probability < beta).
pub fn scalar_example_solutions<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    eps: f64,
    beta: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_eps(eps)?;
    check_beta(beta)?;
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if n_samples < 2 {
        return Err(Error::DegenerateDof(
            "scalar_example_solutions needs at least 2 samples".into(),
        ));
    }
    let belief = GaussianBelief::new(
        DVector::from_element(1, mu),
        DMatrix::from_element(1, 1, sigma * sigma),
    )?;
    let draws = gaussian_draw(&belief, n_samples, rng);
    let mu_hat = draws.data().column(0).mean();
    let naive = mu_hat + norm_inv_cdf(1.0 - eps)? * sigma;
    let t = student_t_quantile((n_samples - 1) as f64, 1.0 - beta)?;
    let robust = naive + t * sigma / (n_samples as f64).sqrt();
    Ok((naive, robust))
}
