//! Obstacle state estimation and sample-based face prediction.
//!
//! The obstacle follows affine dynamics `chi+ = E chi + F + w` with unknown
//! noise; only finite draws of the initial state and of the per-step process
//! noise are available. Prediction pushes those draws through the dynamics
//! (sample i always pairs with noise draw i), and each predicted obstacle
//! face becomes an uncertain half-space whose coefficient moments come from
//! the propagated sample cloud.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_finite_vec, check_symmetric, sym_part};
use crate::model::{FaceGroup, UncertainFace};
use crate::stats::{raw_mean_cov, SampleSet};

/// Diagonal regularization added to predicted-face sample covariances so
/// deterministic coefficient components (exact zeros in the face normals)
/// pass the definiteness floor.
pub const FACE_RIDGE: f64 = 1e-9;

/// Gaussian belief over the obstacle state kept by the tracking filter.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FilterState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_finite_vec(&mean, "FilterState mean")?;
        check_symmetric(&cov, "FilterState covariance")?;
        if mean.len() != cov.nrows() {
            return Err(Error::Dimension("FilterState mean/covariance shapes disagree".into()));
        }
        Ok(FilterState { mean, cov })
    }

    /// Initialize from raw draws: sample mean and (possibly rank-deficient)
    /// sample covariance.
    pub fn from_samples(samples: &SampleSet) -> Result<Self> {
        let (mean, cov) = raw_mean_cov(samples);
        FilterState::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One affine half-space of an obstacle's shape, parameterized by the
/// obstacle state: the ego position is safe when
/// `a' x + c' chi + d >= 0`.
#[derive(Debug, Clone)]
pub struct FaceTemplate {
    /// Ego-state coefficients (zeros on non-position components).
    pub a: DVector<f64>,
    /// Obstacle-state coefficients.
    pub c: DVector<f64>,
    pub d: f64,
}

impl FaceTemplate {
    /// Face coefficient vector at a concrete obstacle state:
    /// `[a; c' chi + d]`, ready to dot with the homogeneous ego state.
    pub fn coefficients(&self, chi: &DVector<f64>) -> DVector<f64> {
        let n = self.a.len();
        let mut d_vec = DVector::zeros(n + 1);
        d_vec.rows_mut(0, n).copy_from(&self.a);
        d_vec[n] = self.c.dot(chi) + self.d;
        d_vec
    }
}

/// The faces of one obstacle; the ego is safe when at least one face
/// constraint holds.
#[derive(Debug, Clone)]
pub struct ShapeTemplate {
    pub faces: Vec<FaceTemplate>,
}

impl ShapeTemplate {
    /// Axis-aligned rectangle (length along the first position axis, width
    /// along the second), centered on the obstacle's position. `n_x` and
    /// `n_chi` size the coefficient vectors; both states carry their
    /// position in components 0 and 1.
    pub fn axis_aligned_car(length: f64, width: f64, n_x: usize, n_chi: usize) -> Result<Self> {
        if n_x < 2 || n_chi < 2 {
            return Err(Error::Dimension(
                "car shape needs at least two position components".into(),
            ));
        }
        if !(length > 0.0 && width > 0.0) {
            return Err(Error::Domain("car length and width must be positive".into()));
        }
        let axis = |k: usize, n: usize, s: f64| {
            let mut v = DVector::zeros(n);
            v[k] = s;
            v
        };
        let faces = vec![
            // Ego ahead of the front bumper.
            FaceTemplate {
                a: axis(0, n_x, 1.0),
                c: axis(0, n_chi, -1.0),
                d: -length / 2.0,
            },
            // Ego behind the rear bumper.
            FaceTemplate {
                a: axis(0, n_x, -1.0),
                c: axis(0, n_chi, 1.0),
                d: -length / 2.0,
            },
            // Ego past the left side.
            FaceTemplate {
                a: axis(1, n_x, 1.0),
                c: axis(1, n_chi, -1.0),
                d: -width / 2.0,
            },
            // Ego past the right side.
            FaceTemplate {
                a: axis(1, n_x, -1.0),
                c: axis(1, n_chi, 1.0),
                d: -width / 2.0,
            },
        ];
        Ok(ShapeTemplate { faces })
    }

    /// True whether the ego state is strictly inside the shape at obstacle
    /// state `chi` (every face constraint violated).
    pub fn contains(&self, chi: &DVector<f64>, x_tilde: &DVector<f64>) -> bool {
        self.faces
            .iter()
            .all(|f| f.coefficients(chi).dot(x_tilde) < 0.0)
    }
}

/// Everything the planner-side pipeline knows about one obstacle: affine
/// dynamics, measurement map, shape, and the finite sample pools standing in
/// for the unknown distributions. True distributions never appear here.
#[derive(Debug, Clone)]
pub struct ObstacleModel {
    /// Closed-loop transition matrix E.
    pub e_mat: DMatrix<f64>,
    /// Affine drift F (feedback target folded in).
    pub f_vec: DVector<f64>,
    /// Measurement map H.
    pub h_mat: DMatrix<f64>,
    /// Measurement noise covariance used by the filter.
    pub sigma_v: DMatrix<f64>,
    pub shape: ShapeTemplate,
    /// Draws of the initial obstacle state.
    pub init_samples: SampleSet,
    /// Per-time-step draws of the process noise; entry t feeds the
    /// transition from t to t+1. All sets share one sample count.
    pub noise_samples: Vec<SampleSet>,
}

impl ObstacleModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.e_mat.nrows();
        if self.e_mat.ncols() != n || self.f_vec.len() != n {
            return Err(Error::Dimension("obstacle dynamics shapes disagree".into()));
        }
        if self.h_mat.ncols() != n || self.sigma_v.nrows() != self.h_mat.nrows() {
            return Err(Error::Dimension("obstacle measurement shapes disagree".into()));
        }
        check_symmetric(&self.sigma_v, "measurement noise covariance")?;
        if self.init_samples.dim() != n {
            return Err(Error::Dimension("initial samples dimension mismatch".into()));
        }
        let n_s = self.init_samples.n_samples();
        for (t, set) in self.noise_samples.iter().enumerate() {
            if set.dim() != n {
                return Err(Error::Dimension(format!("noise samples at t={t} have wrong dimension")));
            }
            if set.n_samples() != n_s {
                return Err(Error::Dimension(format!(
                    "noise samples at t={t} have {} draws, initial state has {n_s}",
                    set.n_samples()
                )));
            }
        }
        for f in &self.shape.faces {
            if f.c.len() != n {
                return Err(Error::Dimension("face template obstacle coefficients mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.init_samples.n_samples()
    }

    /// Sample covariance of the process noise pool at step `t`
    /// (rank-deficient allowed; the filter only needs PSD).
    pub fn process_noise_cov(&self, t: usize) -> Result<DMatrix<f64>> {
        let set = self.noise_samples.get(t).ok_or_else(|| {
            Error::Dimension(format!(
                "no noise samples for step {t}; pool holds {}",
                self.noise_samples.len()
            ))
        })?;
        Ok(raw_mean_cov(set).1)
    }
}

/// Time update: push the belief through the affine dynamics. The noise
/// enters only through its covariance; the sample mean of the noise pool is
/// deliberately not added to the state prediction.
pub fn kf_predict(
    state: &FilterState,
    e_mat: &DMatrix<f64>,
    f_vec: &DVector<f64>,
    sigma_w: &DMatrix<f64>,
) -> Result<FilterState> {
    let n = state.dim();
    if e_mat.nrows() != n || e_mat.ncols() != n || f_vec.len() != n || sigma_w.nrows() != n {
        return Err(Error::Dimension("prediction shapes disagree".into()));
    }
    check_symmetric(sigma_w, "process noise covariance")?;
    let mean = e_mat * &state.mean + f_vec;
    let cov = sym_part(&(e_mat * &state.cov * e_mat.transpose() + sigma_w));
    FilterState::new(mean, cov)
}

/// Measurement update with gain `K = Sigma H' (Sigma_v + H Sigma H')^-1`,
/// covariance in Joseph form (PSD-safe for any gain).
pub fn kf_update(
    state: &FilterState,
    h_mat: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<FilterState> {
    let n = state.dim();
    let m = h_mat.nrows();
    if h_mat.ncols() != n || sigma_v.nrows() != m || sigma_v.ncols() != m || y.len() != m {
        return Err(Error::Dimension("measurement update shapes disagree".into()));
    }
    check_symmetric(sigma_v, "measurement noise covariance")?;
    let s = sym_part(&(sigma_v + h_mat * &state.cov * h_mat.transpose()));
    let s_inv = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?
        .inverse();
    let gain = &state.cov * h_mat.transpose() * s_inv;
    let innovation = y - h_mat * &state.mean;
    let mean = &state.mean + &gain * innovation;
    let i_kh = DMatrix::identity(n, n) - &gain * h_mat;
    let cov = sym_part(&(&i_kh * &state.cov * i_kh.transpose() + &gain * sigma_v * gain.transpose()));
    FilterState::new(mean, cov)
}

/// Push a state sample cloud through `steps = noise_sets.len()` transitions.
/// Sample i of the cloud always consumes draw i of each noise set, so the
/// propagation is a deterministic function of its inputs. Returns the cloud
/// after each step (index k holds the states k+1 transitions ahead).
pub fn propagate_samples(
    initial: &SampleSet,
    e_mat: &DMatrix<f64>,
    f_vec: &DVector<f64>,
    noise_sets: &[&SampleSet],
) -> Result<Vec<SampleSet>> {
    let n = initial.dim();
    let n_s = initial.n_samples();
    if e_mat.nrows() != n || e_mat.ncols() != n || f_vec.len() != n {
        return Err(Error::Dimension("propagation shapes disagree".into()));
    }
    let mut current = initial.data().clone();
    let mut out = Vec::with_capacity(noise_sets.len());
    for (k, noise) in noise_sets.iter().enumerate() {
        if noise.dim() != n || noise.n_samples() != n_s {
            return Err(Error::Dimension(format!(
                "noise set {k} does not match the sample cloud"
            )));
        }
        let mut next = DMatrix::zeros(n_s, n);
        for i in 0..n_s {
            let chi = current.row(i).transpose();
            let stepped = e_mat * chi + f_vec + noise.row(i);
            next.row_mut(i).copy_from(&stepped.transpose());
        }
        out.push(SampleSet::new(next.clone())?);
        current = next;
    }
    Ok(out)
}

/// Turn propagated obstacle sample clouds into uncertain face groups for the
/// planner. Cloud k describes planner time `first_time_index + k`; every
/// face of the shape template becomes one sampled face whose draws are the
/// per-sample coefficient vectors, ridge-regularized ([`FACE_RIDGE`]) so the
/// deterministic normal components keep the covariance nonsingular.
pub fn predicted_face_estimates(
    clouds: &[SampleSet],
    shape: &ShapeTemplate,
    obstacle_index: usize,
    first_time_index: usize,
) -> Result<Vec<FaceGroup>> {
    let mut groups = Vec::with_capacity(clouds.len());
    for (k, cloud) in clouds.iter().enumerate() {
        let t = first_time_index + k;
        let n_s = cloud.n_samples();
        let mut faces = Vec::with_capacity(shape.faces.len());
        for (i, tpl) in shape.faces.iter().enumerate() {
            let dim = tpl.a.len() + 1;
            let mut draws = DMatrix::zeros(n_s, dim);
            for r in 0..n_s {
                let coef = tpl.coefficients(&cloud.row(r));
                draws.row_mut(r).copy_from(&coef.transpose());
            }
            faces.push(UncertainFace::from_samples_ridged(
                SampleSet::new(draws)?,
                FACE_RIDGE,
                t,
                obstacle_index,
                i,
            )?);
        }
        groups.push(FaceGroup {
            time_index: t,
            obstacle_index,
            faces,
        });
    }
    Ok(groups)
}

/// Infinite-horizon discrete LQR gain by fixed-point Riccati iteration
/// (tolerance 1e-10 on the value matrix). Returns K for `u = -K x`.
pub fn dlqr_gain(
    a_mat: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    q_mat: &DMatrix<f64>,
    r_mat: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a_mat.nrows();
    if a_mat.ncols() != n || b_mat.nrows() != n || q_mat.nrows() != n || r_mat.nrows() != b_mat.ncols()
    {
        return Err(Error::Dimension("LQR shapes disagree".into()));
    }
    let mut p = q_mat.clone();
    for _ in 0..20_000 {
        let btp = b_mat.transpose() * &p;
        let gain_denom = (r_mat + &btp * b_mat)
            .cholesky()
            .ok_or_else(|| Error::Numerical("LQR input-cost block is singular".into()))?;
        let k = gain_denom.solve(&(&btp * a_mat));
        let a_cl = a_mat - b_mat * &k;
        let next = sym_part(
            &(q_mat + k.transpose() * r_mat * &k + a_cl.transpose() * &p * a_cl),
        );
        let delta = (&next - &p).abs().max();
        p = next;
        if delta <= 1e-10 {
            let btp = b_mat.transpose() * &p;
            let gain_denom = (r_mat + &btp * b_mat)
                .cholesky()
                .ok_or_else(|| Error::Numerical("LQR input-cost block is singular".into()))?;
            return Ok(gain_denom.solve(&(&btp * a_mat)));
        }
    }
    Err(Error::Numerical("Riccati iteration did not converge".into()))
}
