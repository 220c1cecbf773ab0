//! Problem data model: linear time-varying dynamics, uncertain polyhedral
//! obstacle faces, risk allocation over faces and time, big-M certificates,
//! and quadratic cost specifications.
//!
//! Conventions used throughout the planner:
//! - A trajectory is x_0..x_N with x_{t+1} = A_t x_t + B_t u_t.
//! - An obstacle at time t is a disjunction over its faces: the state is safe
//!   if at least one face constraint d^T [x; 1] >= 0 holds.
//! - Risk budgets eps^t_{ij} are assigned per (time, obstacle, face) and each
//!   must lie in (0, 0.5).

use crate::concentration::{exact_halfspace_margin, robustify_halfspace};
use crate::error::{Error, Result};
use crate::linalg::check_finite_vec;
use crate::stats::{raw_mean_cov, sample_moments, GaussianBelief, MomentEstimate, SampleSet};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Smallest per-constraint risk any allocation may assign. Also the risk level
/// at which big-M certificates are evaluated, so a certificate stays valid for
/// every allocation the toolkit can produce.
pub const RISK_FLOOR: f64 = 1e-6;

/// Per-step input constraint set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InputSet {
    /// lower <= u_t <= upper componentwise.
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// a_mat * u_t <= b_vec.
    Polyhedron {
        a_mat: Vec<Vec<f64>>,
        b_vec: Vec<f64>,
    },
}

impl InputSet {
    pub fn symmetric_box(half_widths: &[f64]) -> Self {
        InputSet::Box {
            lower: half_widths.iter().map(|h| -h).collect(),
            upper: half_widths.to_vec(),
        }
    }

    pub fn input_dim_check(&self, n_u: usize) -> Result<()> {
        let ok = match self {
            InputSet::Box { lower, upper } => lower.len() == n_u && upper.len() == n_u,
            InputSet::Polyhedron { a_mat, b_vec } => {
                a_mat.len() == b_vec.len() && a_mat.iter().all(|r| r.len() == n_u)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("input set does not match input dimension".into()))
        }
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        match self {
            InputSet::Box { lower, upper } => u
                .iter()
                .enumerate()
                .all(|(k, &v)| v >= lower[k] - tol && v <= upper[k] + tol),
            InputSet::Polyhedron { a_mat, b_vec } => a_mat
                .iter()
                .zip(b_vec)
                .all(|(row, &b)| row.iter().zip(u.iter()).map(|(a, v)| a * v).sum::<f64>() <= b + tol),
        }
    }
}

/// Linear time-varying system x_{t+1} = A_t x_t + B_t u_t over a fixed horizon.
#[derive(Debug, Clone)]
pub struct LtvSystem {
    a_mats: Vec<DMatrix<f64>>,
    b_mats: Vec<DMatrix<f64>>,
    initial_state: DVector<f64>,
    input_set: InputSet,
}

impl LtvSystem {
    pub fn new(
        a_mats: Vec<DMatrix<f64>>,
        b_mats: Vec<DMatrix<f64>>,
        initial_state: DVector<f64>,
        input_set: InputSet,
    ) -> Result<Self> {
        if a_mats.is_empty() || a_mats.len() != b_mats.len() {
            return Err(Error::Dimension(
                "need equal nonzero counts of A and B matrices".into(),
            ));
        }
        let n_x = initial_state.len();
        for (t, (a, b)) in a_mats.iter().zip(&b_mats).enumerate() {
            if a.nrows() != n_x || a.ncols() != n_x || b.nrows() != n_x {
                return Err(Error::Dimension(format!(
                    "dynamics matrices at step {t} do not match state dimension {n_x}"
                )));
            }
            if b.ncols() != b_mats[0].ncols() {
                return Err(Error::Dimension("input dimension varies across steps".into()));
            }
        }
        check_finite_vec(&initial_state, "initial state")?;
        input_set.input_dim_check(b_mats[0].ncols())?;
        Ok(LtvSystem {
            a_mats,
            b_mats,
            initial_state,
            input_set,
        })
    }

    pub fn time_invariant(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        horizon: usize,
        initial_state: DVector<f64>,
        input_set: InputSet,
    ) -> Result<Self> {
        Self::new(vec![a; horizon], vec![b; horizon], initial_state, input_set)
    }

    pub fn horizon(&self) -> usize {
        self.a_mats.len()
    }

    pub fn state_dim(&self) -> usize {
        self.initial_state.len()
    }

    pub fn input_dim(&self) -> usize {
        self.b_mats[0].ncols()
    }

    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a_mats[t]
    }

    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b_mats[t]
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }

    pub fn input_set(&self) -> &InputSet {
        &self.input_set
    }

    /// Replace the initial state (used by receding-horizon re-planning).
    pub fn with_initial_state(&self, x0: DVector<f64>) -> Result<Self> {
        Self::new(self.a_mats.clone(), self.b_mats.clone(), x0, self.input_set.clone())
    }

    /// Forward simulation. Returns x_0..x_N (N+1 states).
    pub fn rollout(&self, u_seq: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        if u_seq.len() != self.horizon() {
            return Err(Error::Dimension(format!(
                "rollout needs {} inputs, got {}",
                self.horizon(),
                u_seq.len()
            )));
        }
        let mut traj = Vec::with_capacity(self.horizon() + 1);
        traj.push(self.initial_state.clone());
        for (t, u) in u_seq.iter().enumerate() {
            if u.len() != self.input_dim() {
                return Err(Error::Dimension(format!("input {t} has wrong dimension")));
            }
            let next = &self.a_mats[t] * traj.last().unwrap() + &self.b_mats[t] * u;
            traj.push(next);
        }
        Ok(traj)
    }

    /// The affine map from stacked inputs to stacked states x_1..x_N:
    /// vec(x_1..x_N) = Phi * vec(u_0..u_{N-1}) + phi0.
    pub fn affine_map(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.horizon();
        let (n_x, n_u) = (self.state_dim(), self.input_dim());
        let mut phi = DMatrix::zeros(n * n_x, n * n_u);
        let mut phi0 = DVector::zeros(n * n_x);
        // Running products: state_gain = A_{t-1}..A_0, copied forward per row.
        let mut free = self.initial_state.clone();
        let mut input_blocks: Vec<DMatrix<f64>> = Vec::new();
        for t in 0..n {
            free = &self.a_mats[t] * &free;
            for blk in input_blocks.iter_mut() {
                *blk = &self.a_mats[t] * &*blk;
            }
            input_blocks.push(self.b_mats[t].clone());
            phi0.rows_mut(t * n_x, n_x).copy_from(&free);
            for (k, blk) in input_blocks.iter().enumerate() {
                phi.view_mut((t * n_x, k * n_u), (n_x, n_u)).copy_from(blk);
            }
        }
        (phi, phi0)
    }
}

/// Free-function alias for the forward simulation.
pub fn rollout(sys: &LtvSystem, u_seq: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    sys.rollout(u_seq)
}

/// How the coefficient vector d of a face constraint d^T [x; 1] >= 0 is known.
#[derive(Debug, Clone)]
pub enum FaceData {
    /// True Gaussian moments available.
    Exact(GaussianBelief),
    /// Raw draws available; moment estimate derived from them.
    Sampled {
        samples: SampleSet,
        estimate: MomentEstimate,
    },
    /// Only a moment estimate available (e.g. from propagated samples).
    Estimated(MomentEstimate),
}

/// One uncertain half-space face of an obstacle at one time step.
#[derive(Debug, Clone)]
pub struct UncertainFace {
    pub data: FaceData,
    pub time_index: usize,
    pub obstacle_index: usize,
    pub face_index: usize,
}

impl UncertainFace {
    pub fn exact(belief: GaussianBelief, t: usize, j: usize, i: usize) -> Self {
        UncertainFace {
            data: FaceData::Exact(belief),
            time_index: t,
            obstacle_index: j,
            face_index: i,
        }
    }

    pub fn from_samples(samples: SampleSet, t: usize, j: usize, i: usize) -> Result<Self> {
        let estimate = sample_moments(&samples)?;
        Ok(UncertainFace {
            data: FaceData::Sampled { samples, estimate },
            time_index: t,
            obstacle_index: j,
            face_index: i,
        })
    }

    /// Sample-based face whose covariance is regularized by `ridge * I` before
    /// the positive-definiteness check. Needed when some coefficient
    /// components are deterministic (zero sample variance).
    pub fn from_samples_ridged(
        samples: SampleSet,
        ridge: f64,
        t: usize,
        j: usize,
        i: usize,
    ) -> Result<Self> {
        let (mean, mut cov) = raw_mean_cov(&samples);
        for k in 0..cov.nrows() {
            cov[(k, k)] += ridge;
        }
        let estimate = MomentEstimate::new(mean, cov, samples.n_samples())?;
        Ok(UncertainFace {
            data: FaceData::Sampled { samples, estimate },
            time_index: t,
            obstacle_index: j,
            face_index: i,
        })
    }

    pub fn estimated(estimate: MomentEstimate, t: usize, j: usize, i: usize) -> Self {
        UncertainFace {
            data: FaceData::Estimated(estimate),
            time_index: t,
            obstacle_index: j,
            face_index: i,
        }
    }

    /// Dimension of d (state dimension + 1).
    pub fn dim(&self) -> usize {
        match &self.data {
            FaceData::Exact(b) => b.dim(),
            FaceData::Sampled { estimate, .. } => estimate.dim(),
            FaceData::Estimated(e) => e.dim(),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        match &self.data {
            FaceData::Exact(b) => &b.mean,
            FaceData::Sampled { estimate, .. } => &estimate.mean_hat,
            FaceData::Estimated(e) => &e.mean_hat,
        }
    }

    pub fn estimate(&self) -> Option<&MomentEstimate> {
        match &self.data {
            FaceData::Exact(_) => None,
            FaceData::Sampled { estimate, .. } => Some(estimate),
            FaceData::Estimated(e) => Some(e),
        }
    }

    /// Covariance of d: the true one for exact faces, the sample estimate
    /// otherwise (plug-in use).
    pub fn covariance(&self) -> &DMatrix<f64> {
        match &self.data {
            FaceData::Exact(b) => &b.cov,
            FaceData::Sampled { estimate, .. } => &estimate.cov_hat,
            FaceData::Estimated(e) => &e.cov_hat,
        }
    }

    /// Covariance square root (symmetric PSD factor).
    pub fn cov_sqrt(&self) -> DMatrix<f64> {
        match &self.data {
            FaceData::Exact(b) => b.cov_sqrt(),
            FaceData::Sampled { estimate, .. } => estimate.cov_sqrt(),
            FaceData::Estimated(e) => e.cov_sqrt(),
        }
    }

    pub fn samples(&self) -> Option<&SampleSet> {
        match &self.data {
            FaceData::Sampled { samples, .. } => Some(samples),
            _ => None,
        }
    }

    /// Feasibility margin of this face's chance constraint at risk `eps`
    /// evaluated at the homogeneous point `x_tilde` (exact faces use the
    /// exact-moment form; sampled/estimated faces the robustified form with
    /// confidence parameter `beta`). Nonnegative means satisfied.
    pub fn margin(&self, eps: f64, beta: f64, x_tilde: &DVector<f64>) -> Result<f64> {
        match &self.data {
            FaceData::Exact(b) => exact_halfspace_margin(b, eps, x_tilde),
            FaceData::Sampled { estimate, .. } | FaceData::Estimated(estimate) => {
                Ok(robustify_halfspace(estimate, eps, beta)?.margin(x_tilde))
            }
        }
    }
}

/// All faces of one obstacle at one time step (a disjunction: safe iff at
/// least one face constraint holds).
#[derive(Debug, Clone)]
pub struct FaceGroup {
    pub time_index: usize,
    pub obstacle_index: usize,
    pub faces: Vec<UncertainFace>,
}

/// Obstacle face groups over the horizon, sorted by (time, obstacle).
#[derive(Debug, Clone)]
pub struct ObstacleSet {
    groups: Vec<FaceGroup>,
}

impl ObstacleSet {
    pub fn new(mut groups: Vec<FaceGroup>) -> Result<Self> {
        for g in &groups {
            if g.faces.is_empty() {
                return Err(Error::Dimension("face group with no faces".into()));
            }
            for (i, f) in g.faces.iter().enumerate() {
                if f.time_index != g.time_index
                    || f.obstacle_index != g.obstacle_index
                    || f.face_index != i
                {
                    return Err(Error::Dimension(
                        "face indices inconsistent with group placement".into(),
                    ));
                }
            }
        }
        groups.sort_by_key(|g| (g.time_index, g.obstacle_index));
        for w in groups.windows(2) {
            if w[0].time_index == w[1].time_index && w[0].obstacle_index == w[1].obstacle_index {
                return Err(Error::Dimension("duplicate (time, obstacle) group".into()));
            }
        }
        Ok(ObstacleSet { groups })
    }

    /// Replicate per-obstacle face beliefs across t = 1..=horizon (static
    /// obstacles constrain every step with the same distribution).
    pub fn static_over_horizon(
        per_obstacle_faces: &[Vec<GaussianBelief>],
        horizon: usize,
    ) -> Result<Self> {
        let mut groups = Vec::new();
        for t in 1..=horizon {
            for (j, faces) in per_obstacle_faces.iter().enumerate() {
                let faces = faces
                    .iter()
                    .enumerate()
                    .map(|(i, b)| UncertainFace::exact(b.clone(), t, j, i))
                    .collect();
                groups.push(FaceGroup {
                    time_index: t,
                    obstacle_index: j,
                    faces,
                });
            }
        }
        Self::new(groups)
    }

    pub fn groups(&self) -> &[FaceGroup] {
        &self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Number of distinct obstacles (distinct obstacle indices).
    pub fn n_obstacles(&self) -> usize {
        let mut ids: Vec<usize> = self.groups.iter().map(|g| g.obstacle_index).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Total face-constraint count over all groups.
    pub fn n_constraints(&self) -> usize {
        self.groups.iter().map(|g| g.faces.len()).sum()
    }

    pub fn iter_faces(&self) -> impl Iterator<Item = &UncertainFace> {
        self.groups.iter().flat_map(|g| g.faces.iter())
    }
}

/// Which simultaneity convention a risk allocation is accounted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocationAccounting {
    /// Every face constraint can be active at once: the budgets of all
    /// entries must sum to at most the total.
    AllFaces,
    /// Exactly one face per group is active at a time: only the largest
    /// budget in each group counts toward the total.
    OnePerGroup,
}

/// Assignment of per-constraint risk budgets eps^t_{ij}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskAllocation {
    pub eps_total: f64,
    /// Keyed by (time, obstacle, face). Serialized as a flat entry list
    /// because JSON maps need string keys.
    #[serde(with = "risk_entries")]
    pub per_constraint: BTreeMap<(usize, usize, usize), f64>,
    pub accounting: AllocationAccounting,
}

mod risk_entries {
    use super::BTreeMap;
    use serde::de::{Deserialize, Deserializer};
    use serde::ser::{Serialize, Serializer};

    type Map = BTreeMap<(usize, usize, usize), f64>;

    pub fn serialize<S: Serializer>(map: &Map, ser: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<(usize, usize, usize, f64)> =
            map.iter().map(|(&(t, j, i), &e)| (t, j, i, e)).collect();
        entries.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Map, D::Error> {
        let entries = Vec::<(usize, usize, usize, f64)>::deserialize(de)?;
        Ok(entries.into_iter().map(|(t, j, i, e)| ((t, j, i), e)).collect())
    }
}

impl RiskAllocation {
    pub fn get(&self, t: usize, j: usize, i: usize) -> Result<f64> {
        self.per_constraint.get(&(t, j, i)).copied().ok_or_else(|| {
            Error::RiskDomain(format!("no risk budget assigned to face ({t},{j},{i})"))
        })
    }

    /// Check the budget invariants: each entry in (0, 0.5) and the
    /// accounting-dependent sum at most eps_total (small float slop allowed).
    pub fn validate(&self, obstacles: &ObstacleSet) -> Result<()> {
        if !(self.eps_total > 0.0 && self.eps_total < 1.0) {
            return Err(Error::RiskDomain(format!(
                "total risk must lie in (0, 1), got {}",
                self.eps_total
            )));
        }
        for (&(t, j, i), &e) in &self.per_constraint {
            if !(e > 0.0 && e < 0.5) {
                return Err(Error::RiskDomain(format!(
                    "risk budget for face ({t},{j},{i}) must lie in (0, 0.5), got {e}"
                )));
            }
        }
        for g in obstacles.groups() {
            for i in 0..g.faces.len() {
                self.get(g.time_index, g.obstacle_index, i)?;
            }
        }
        let used: f64 = match self.accounting {
            AllocationAccounting::AllFaces => self.per_constraint.values().sum(),
            AllocationAccounting::OnePerGroup => obstacles
                .groups()
                .iter()
                .map(|g| {
                    (0..g.faces.len())
                        .map(|i| self.per_constraint[&(g.time_index, g.obstacle_index, i)])
                        .fold(0.0f64, f64::max)
                })
                .sum(),
        };
        if used > self.eps_total * (1.0 + 1e-9) + 1e-15 {
            return Err(Error::RiskDomain(format!(
                "allocated risk {used} exceeds total budget {}",
                self.eps_total
            )));
        }
        Ok(())
    }
}

/// Uniform split of the total budget over every face constraint:
/// eps / (N * sum_j F_j) each. Valid when all faces of a group may be
/// enforced simultaneously.
pub fn risk_alloc_uniform(problem: &PlanningProblem) -> Result<RiskAllocation> {
    alloc_uniform_parts(
        &problem.obstacles,
        problem.system.horizon(),
        problem.risk.eps_total,
    )
}

fn alloc_uniform_parts(
    obstacles: &ObstacleSet,
    horizon: usize,
    eps_total: f64,
) -> Result<RiskAllocation> {
    let faces_per_step: usize = {
        let mut per_j: BTreeMap<usize, usize> = BTreeMap::new();
        for g in obstacles.groups() {
            per_j.insert(g.obstacle_index, g.faces.len());
        }
        per_j.values().sum()
    };
    let denom = (horizon * faces_per_step.max(1)) as f64;
    let each = eps_total / denom;
    if each >= 0.5 {
        return Err(Error::RiskDomain(format!(
            "uniform per-constraint risk {each} is not below 0.5"
        )));
    }
    let mut per_constraint = BTreeMap::new();
    for g in obstacles.groups() {
        for i in 0..g.faces.len() {
            per_constraint.insert((g.time_index, g.obstacle_index, i), each);
        }
    }
    let alloc = RiskAllocation {
        eps_total,
        per_constraint,
        accounting: AllocationAccounting::AllFaces,
    };
    alloc.validate(obstacles)?;
    Ok(alloc)
}

/// Improved split: eps / (N * N_o) on every face, valid under the
/// exactly-one-active-face-per-group convention (only one face per group is
/// ever enforced, so only that one draws budget).
pub fn risk_alloc_improved(problem: &PlanningProblem) -> Result<RiskAllocation> {
    alloc_improved_parts(
        &problem.obstacles,
        problem.system.horizon(),
        problem.risk.eps_total,
    )
}

fn alloc_improved_parts(
    obstacles: &ObstacleSet,
    horizon: usize,
    eps_total: f64,
) -> Result<RiskAllocation> {
    let n_o = obstacles.n_obstacles().max(1);
    let each = eps_total / (horizon * n_o) as f64;
    if each >= 0.5 {
        return Err(Error::RiskDomain(format!(
            "improved per-constraint risk {each} is not below 0.5"
        )));
    }
    let mut per_constraint = BTreeMap::new();
    for g in obstacles.groups() {
        for i in 0..g.faces.len() {
            per_constraint.insert((g.time_index, g.obstacle_index, i), each);
        }
    }
    let alloc = RiskAllocation {
        eps_total,
        per_constraint,
        accounting: AllocationAccounting::OnePerGroup,
    };
    alloc.validate(obstacles)?;
    Ok(alloc)
}

/// Which allocator a problem is built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationKind {
    Uniform,
    Improved,
}

/// Quadratic cost over a trajectory, in the two supported shapes.
#[derive(Debug, Clone)]
pub enum CostSpec {
    /// ||x_N - target||^2.
    TerminalTracking { target: DVector<f64> },
    /// sum_t ||output * x_t - target||^2 + input_weight * sum_t ||u_t||^2,
    /// states t = 1..N, inputs t = 0..N-1.
    StageTracking {
        output: DMatrix<f64>,
        target: DVector<f64>,
        input_weight: f64,
    },
}

impl CostSpec {
    /// Evaluate on a realized trajectory (x_0..x_N) and input sequence.
    pub fn evaluate(&self, traj: &[DVector<f64>], u_seq: &[DVector<f64>]) -> f64 {
        match self {
            CostSpec::TerminalTracking { target } => {
                (traj.last().expect("nonempty trajectory") - target).norm_squared()
            }
            CostSpec::StageTracking {
                output,
                target,
                input_weight,
            } => {
                let state_part: f64 = traj[1..]
                    .iter()
                    .map(|x| (output * x - target).norm_squared())
                    .sum();
                let input_part: f64 = u_seq.iter().map(|u| u.norm_squared()).sum();
                state_part + input_weight * input_part
            }
        }
    }

    pub fn dim_check(&self, n_x: usize) -> Result<()> {
        let ok = match self {
            CostSpec::TerminalTracking { target } => target.len() == n_x,
            CostSpec::StageTracking { output, target, .. } => {
                output.ncols() == n_x && output.nrows() == target.len()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("cost specification does not match state dimension".into()))
        }
    }
}

/// Axis-aligned box, used for hard state bounds and big-M certificates.
#[derive(Debug, Clone)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("box bound dimensions differ".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::Certificate("empty box: a lower bound exceeds its upper bound".into()));
        }
        Ok(BoxSet { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.iter()
            .enumerate()
            .all(|(k, &v)| v >= self.lower[k] - tol && v <= self.upper[k] + tol)
    }

    /// All 2^n corner points. Errors when unbounded or too high-dimensional
    /// to enumerate.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>> {
        let n = self.dim();
        if n > 16 {
            return Err(Error::Certificate(format!(
                "refusing to enumerate 2^{n} box vertices"
            )));
        }
        if self
            .lower
            .iter()
            .chain(self.upper.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Certificate(
                "big-M certificate needs a bounded box".into(),
            ));
        }
        let mut out = Vec::with_capacity(1 << n);
        for mask in 0u32..(1u32 << n) {
            let v = DVector::from_fn(n, |k, _| {
                if mask & (1 << k) != 0 {
                    self.upper[k]
                } else {
                    self.lower[k]
                }
            });
            out.push(v);
        }
        Ok(out)
    }

    /// Deterministic quasi-random interior points (for certificate spot checks).
    pub fn probe_points(&self, count: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..count)
            .map(|s| {
                DVector::from_fn(n, |k, _| {
                    // Weyl sequence on irrational multiples: low-discrepancy
                    // and seed-free.
                    let frac = ((s + 1) as f64 * (k as f64 + 2.0).sqrt()).fract();
                    self.lower[k] + frac * (self.upper[k] - self.lower[k])
                })
            })
            .collect()
    }
}

/// A complete open-loop planning instance.
#[derive(Debug, Clone)]
pub struct PlanningProblem {
    pub system: LtvSystem,
    pub obstacles: ObstacleSet,
    pub risk: RiskAllocation,
    pub big_m: f64,
    pub beta: f64,
    pub cost: CostSpec,
    /// Hard componentwise state bounds applied to x_1..x_N (infinite entries
    /// mean unconstrained). Also the default big-M certificate domain.
    pub state_box: Option<BoxSet>,
}

impl PlanningProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: LtvSystem,
        obstacles: ObstacleSet,
        eps_total: f64,
        beta: f64,
        big_m: f64,
        cost: CostSpec,
        state_box: Option<BoxSet>,
        allocation: AllocationKind,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Domain(format!("beta must lie in (0, 1), got {beta}")));
        }
        if !(big_m > 0.0) || !big_m.is_finite() {
            return Err(Error::Certificate(format!("big-M must be positive and finite, got {big_m}")));
        }
        let n_x = system.state_dim();
        cost.dim_check(n_x)?;
        for f in obstacles.iter_faces() {
            if f.dim() != n_x + 1 {
                return Err(Error::Dimension(format!(
                    "face ({},{},{}) has dimension {}, expected state dimension + 1 = {}",
                    f.time_index,
                    f.obstacle_index,
                    f.face_index,
                    f.dim(),
                    n_x + 1
                )));
            }
            if f.time_index == 0 || f.time_index > system.horizon() {
                return Err(Error::Dimension(format!(
                    "face time index {} outside 1..={}",
                    f.time_index,
                    system.horizon()
                )));
            }
        }
        if let Some(b) = &state_box {
            if b.dim() != n_x {
                return Err(Error::Dimension("state box dimension mismatch".into()));
            }
        }
        let risk = match allocation {
            AllocationKind::Uniform => alloc_uniform_parts(&obstacles, system.horizon(), eps_total)?,
            AllocationKind::Improved => {
                alloc_improved_parts(&obstacles, system.horizon(), eps_total)?
            }
        };
        Ok(PlanningProblem {
            system,
            obstacles,
            risk,
            big_m,
            beta,
            cost,
            state_box,
        })
    }

    /// Swap in a different (validated) risk allocation.
    pub fn with_risk(mut self, risk: RiskAllocation) -> Result<Self> {
        risk.validate(&self.obstacles)?;
        self.risk = risk;
        Ok(self)
    }

    pub fn homogeneous(x: &DVector<f64>) -> DVector<f64> {
        let mut h = DVector::zeros(x.len() + 1);
        h.rows_mut(0, x.len()).copy_from(x);
        h[x.len()] = 1.0;
        h
    }
}

/// Worst-case left-over of any face constraint over the box, evaluated at the
/// floor risk level (the most demanding quantile any allocation can request),
/// times a 1.2 safety factor. Adding M with an excluded binary then makes the
/// constraint hold everywhere in the box.
pub fn big_m_value(problem: &PlanningProblem, state_bounds: &BoxSet) -> Result<f64> {
    if state_bounds.dim() != problem.system.state_dim() {
        return Err(Error::Dimension("big-M box dimension mismatch".into()));
    }
    let vertices = state_bounds.vertices()?;
    let mut worst = f64::NEG_INFINITY;
    for face in problem.obstacles.iter_faces() {
        // The margin is concave in x_tilde (affine minus norms), so its
        // minimum over the box is attained at a vertex.
        for v in &vertices {
            let x_tilde = PlanningProblem::homogeneous(v);
            let short = -face.margin(RISK_FLOOR, problem.beta, &x_tilde)?;
            worst = worst.max(short);
            if let Some(samples) = face.samples() {
                for r in 0..samples.n_samples() {
                    let d = samples.row(r);
                    worst = worst.max(-d.dot(&x_tilde));
                }
            }
        }
    }
    if !worst.is_finite() {
        return Err(Error::Certificate(
            "big-M certificate evaluated to a non-finite value".into(),
        ));
    }
    // All faces satisfied everywhere: any positive M works, keep it small.
    Ok(1.2 * worst.max(1e-3))
}

/// Exhaustively compare the feasible input sets of two formulations on a tiny
/// instance: (a) fixed per-face budget eps/(N*N_o) with exactly one active
/// face per group, and (b) free choice of active subsets (at least one per
/// group) combined with any allocation from a coarse budget-respecting grid.
/// Returns true when both accept exactly the same inputs from a deterministic
/// lattice over the input box.
pub fn improved_vs_full_equivalence_check(problem: &PlanningProblem) -> Result<bool> {
    let sys = &problem.system;
    let n = sys.horizon();
    let n_u = sys.input_dim();
    let n_coords = n * n_u;
    const LATTICE_PER_COORD: usize = 3;
    if LATTICE_PER_COORD.pow(n_coords as u32) > 1 << 16 {
        return Err(Error::Config(format!(
            "instance too large for exhaustive input lattice: {n_coords} input coordinates"
        )));
    }
    let assignments: usize = problem
        .obstacles
        .groups()
        .iter()
        .map(|g| g.faces.len())
        .product();
    let subset_patterns: usize = problem
        .obstacles
        .groups()
        .iter()
        .map(|g| (1usize << g.faces.len()) - 1)
        .product();
    if assignments.max(subset_patterns) > 1 << 16 {
        return Err(Error::Config(
            "instance too large for exhaustive binary enumeration".into(),
        ));
    }

    let (lo, hi) = match sys.input_set() {
        InputSet::Box { lower, upper } => (lower.clone(), upper.clone()),
        InputSet::Polyhedron { .. } => {
            return Err(Error::Config(
                "equivalence check needs a box input set".into(),
            ))
        }
    };

    let improved = alloc_improved_parts(&problem.obstacles, n, problem.risk.eps_total)?;
    let eps_improved = improved.per_constraint.values().next().copied().unwrap_or(0.0);

    let mut verdict = true;
    'points: for point in 0..LATTICE_PER_COORD.pow(n_coords as u32) {
        let mut u_seq = Vec::with_capacity(n);
        for t in 0..n {
            let u = DVector::from_fn(n_u, |k, _| {
                let coord = t * n_u + k;
                let step = (point / LATTICE_PER_COORD.pow(coord as u32)) % LATTICE_PER_COORD;
                lo[k] + (hi[k] - lo[k]) * step as f64 / (LATTICE_PER_COORD - 1) as f64
            });
            u_seq.push(u);
        }
        let traj = sys.rollout(&u_seq)?;
        if let Some(b) = &problem.state_box {
            if traj[1..].iter().any(|x| !b.contains(x, 1e-9)) {
                continue 'points;
            }
        }
        let margins: Vec<Vec<Vec<f64>>> = problem
            .obstacles
            .groups()
            .iter()
            .map(|g| {
                let x_tilde = PlanningProblem::homogeneous(&traj[g.time_index]);
                g.faces
                    .iter()
                    .map(|f| {
                        // Margin for a menu of budgets: the coarse grid levels
                        // used by the free-allocation side, then the improved
                        // value as the final entry.
                        grid_levels(problem)
                            .iter()
                            .chain(std::iter::once(&eps_improved))
                            .map(|&e| f.margin(e, problem.beta, &x_tilde))
                            .collect::<Result<Vec<f64>>>()
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let n_levels = grid_levels(problem).len();
        // Formulation (a): exactly one active face per group at the improved
        // budget (margin index n_levels is the improved entry).
        let feasible_fixed = margins
            .iter()
            .all(|g| g.iter().any(|levels| levels[n_levels] >= -1e-9));

        // Formulation (b): any nonempty active subset per group; the
        // allocation grid assigns each active face one of the levels so that
        // the total stays within budget.
        let feasible_free = free_formulation_feasible(problem, &margins)?;

        if feasible_fixed != feasible_free {
            verdict = false;
            break 'points;
        }
    }
    Ok(verdict)
}

/// Budget levels tried per active constraint in the free-allocation side:
/// near-floor, the uniform split over all constraints, and a near-greedy
/// large share. All stay in (0, 0.5).
fn grid_levels(problem: &PlanningProblem) -> Vec<f64> {
    let n_con = problem.obstacles.n_constraints().max(1);
    let eps = problem.risk.eps_total;
    let mut levels = vec![RISK_FLOOR, eps / n_con as f64, (eps * 0.9).min(0.49)];
    levels.retain(|&e| e > 0.0 && e < 0.5);
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    levels
}

fn free_formulation_feasible(
    problem: &PlanningProblem,
    margins: &[Vec<Vec<f64>>],
) -> Result<bool> {
    let levels = grid_levels(problem);
    let eps = problem.risk.eps_total;
    let groups: Vec<&Vec<Vec<f64>>> = margins.iter().collect();
    // For each group enumerate nonempty active subsets; every active face
    // needs some level with nonnegative margin, drawing that level's budget.
    // Faces are monotone in the budget (larger eps, weaker constraint), so
    // each face's cheapest satisfying level is the right greedy choice.
    let mut cheapest: Vec<Vec<Option<f64>>> = Vec::with_capacity(groups.len());
    for g in &groups {
        let mut per_face = Vec::with_capacity(g.len());
        for face_levels in g.iter() {
            let mut found = None;
            for (li, &lvl) in levels.iter().enumerate() {
                if face_levels[li] >= -1e-9 {
                    found = Some(lvl);
                    break;
                }
            }
            per_face.push(found);
        }
        cheapest.push(per_face);
    }
    // A subset is viable iff all its faces are satisfiable; its cost is the
    // sum of cheapest budgets. Minimizing across subsets means picking the
    // single cheapest satisfiable face per group (supersets only add cost).
    let mut total = 0.0f64;
    for per_face in &cheapest {
        let best = per_face
            .iter()
            .filter_map(|c| *c)
            .fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return Ok(false);
        }
        total += best;
    }
    Ok(total <= eps * (1.0 + 1e-9))
}
