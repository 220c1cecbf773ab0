//! Gaussian beliefs, sample sets, and sample moments.

use crate::error::{Error, Result};
use crate::linalg::{check_finite_vec, check_symmetric, psd_sqrt, sym_eig_range, sym_part};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative eigenvalue floor for the sample-covariance definiteness check:
/// the smallest eigenvalue must exceed `1e-12 x` the largest.
pub const COV_CONDITION_FLOOR: f64 = 1e-12;

/// A Gaussian with exactly known moments.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Validates shape, finiteness, symmetry, and positive semidefiniteness
    /// (up to roundoff).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_finite_vec(&mean, "GaussianBelief mean")?;
        check_symmetric(&cov, "GaussianBelief covariance")?;
        if mean.len() != cov.nrows() {
            return Err(Error::Dimension(format!(
                "GaussianBelief: mean has {} entries, covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let (lo, hi) = sym_eig_range(&cov);
        if lo < -1e-8 * hi.max(1e-300) {
            return Err(Error::Domain(format!(
                "GaussianBelief: covariance indefinite (eigenvalue {lo})"
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Symmetric PSD square root of the covariance (eigendecomposition with
    /// negative-roundoff eigenvalues clipped at zero).
    pub fn cov_sqrt(&self) -> DMatrix<f64> {
        psd_sqrt(&self.cov)
    }
}

/// A finite i.i.d. sample set; rows are draws.
#[derive(Debug, Clone)]
pub struct SampleSet {
    samples: DMatrix<f64>,
}

impl SampleSet {
    /// At least two samples, every entry finite.
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() < 2 {
            return Err(Error::DegenerateSamples(format!(
                "need at least 2 samples, got {}",
                samples.nrows()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("SampleSet: non-finite entry".into()));
        }
        Ok(Self { samples })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.samples
    }

    /// One draw as a column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.samples.row(i).transpose()
    }
}

/// Sample mean and unbiased sample covariance, with the sample count they
/// came from.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub mean_hat: DVector<f64>,
    pub cov_hat: DMatrix<f64>,
    pub n_samples: usize,
}

impl MomentEstimate {
    /// Validates symmetry and the definiteness floor
    /// (lambda_min > [`COV_CONDITION_FLOOR`] x lambda_max).
    pub fn new(mean_hat: DVector<f64>, cov_hat: DMatrix<f64>, n_samples: usize) -> Result<Self> {
        check_finite_vec(&mean_hat, "MomentEstimate mean")?;
        check_symmetric(&cov_hat, "MomentEstimate covariance")?;
        if mean_hat.len() != cov_hat.nrows() {
            return Err(Error::Dimension(
                "MomentEstimate: mean/covariance shapes disagree".into(),
            ));
        }
        let (lo, hi) = sym_eig_range(&cov_hat);
        if !(lo > COV_CONDITION_FLOOR * hi) || hi <= 0.0 {
            return Err(Error::DegenerateSamples(format!(
                "sample covariance not positive definite: eigenvalues span [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            mean_hat,
            cov_hat,
            n_samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean_hat.len()
    }

    /// Largest covariance eigenvalue.
    pub fn lambda_max(&self) -> f64 {
        sym_eig_range(&self.cov_hat).1
    }

    pub fn cov_sqrt(&self) -> DMatrix<f64> {
        psd_sqrt(&self.cov_hat)
    }
}

/// Draw `n` i.i.d. samples from a Gaussian belief. Deterministic for a fixed
/// RNG state: sample i consumes draws [i*dim, (i+1)*dim).
pub fn gaussian_draw<R: Rng + ?Sized>(belief: &GaussianBelief, n: usize, rng: &mut R) -> SampleSet {
    let d = belief.dim();
    let l = belief.cov_sqrt();
    let mut out = DMatrix::zeros(n.max(2), d);
    let mut z = DVector::zeros(d);
    for i in 0..n {
        for k in 0..d {
            z[k] = rng.sample(StandardNormal);
        }
        let x = &belief.mean + &l * &z;
        out.row_mut(i).copy_from(&x.transpose());
    }
    // The n >= 2 floor is SampleSet's invariant; callers ask for n >= 2.
    SampleSet::new(out.rows(0, n.max(2)).into_owned()).expect("constructed finite samples")
}

/// One draw from a Gaussian belief, same transform convention as
/// [`gaussian_draw`] (consumes exactly `dim` standard-normal variates).
pub fn gaussian_draw_one<R: Rng + ?Sized>(belief: &GaussianBelief, rng: &mut R) -> DVector<f64> {
    let l = belief.cov_sqrt();
    let z = DVector::from_fn(belief.dim(), |_, _| rng.sample(StandardNormal));
    &belief.mean + l * z
}

/// Mean and unbiased covariance of a sample set without any definiteness
/// check; for noise/state estimates where exact zero-variance coordinates are
/// legitimate (the Kalman propagation only needs PSD).
pub fn raw_mean_cov(set: &SampleSet) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.n_samples();
    let d = set.dim();
    let data = set.data();
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        for j in 0..d {
            mean[j] += data[(i, j)];
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let da = data[(i, a)] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (data[(i, b)] - mean[b]);
            }
        }
    }
    cov /= (n - 1) as f64;
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    (mean, sym_part(&cov))
}

/// Sample mean and unbiased sample covariance, enforcing the
/// positive-definiteness floor the downstream robustification requires.
pub fn sample_moments(set: &SampleSet) -> Result<MomentEstimate> {
    let (mean, cov) = raw_mean_cov(set);
    MomentEstimate::new(mean, cov, set.n_samples())
}

/// Derive a reproducible child seed from a master seed, a purpose tag, and a
/// stream index. FNV-1a over the tag plus two splitmix64 finalization rounds;
/// fully specified here so seeds never drift with the standard library's
/// hasher. Seed manifests record these values.
pub fn derive_seed(master_seed: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in tag.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let z = master_seed ^ splitmix64(h) ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15));
    splitmix64(z)
}

/// Independent, reproducible RNG stream for `(master_seed, tag, index)`.
pub fn rng_for(master_seed: u64, tag: &str, index: u64) -> rand_chacha::ChaCha12Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha12Rng::seed_from_u64(derive_seed(master_seed, tag, index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
