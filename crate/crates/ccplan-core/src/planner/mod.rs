//! Mixed-integer SOCP assembly and solution for obstacle-avoidance planning.
//!
//! Three assembly routes over the same disjunctive structure:
//! exact-moment (known Gaussian face coefficients), moment-robust
//! (sample estimates inflated by the concentration radii), and
//! sample-wise (one linear row per draw). Each produces a [`Template`]
//! that [`solve_misocp`] finishes with branch-and-bound over the
//! per-group face-selection binaries.

mod bnb;
mod redistribute;

pub use bnb::solve_misocp;
pub use redistribute::{redistribute_risk, RedistributeOptions};

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::concentration::robustify_halfspace;
use crate::conic::{ConeProgram, SocBlock, SparseRow};
use crate::error::{Error, Result};
use crate::model::{CostSpec, InputSet, PlanningProblem, RiskAllocation, UncertainFace};
use crate::stats::norm_inv_cdf;

/// Default branch-and-bound node budget.
pub const NODE_LIMIT_DEFAULT: usize = 100_000;

/// Binaries whose largest fractional distance from {0,1} is below this are
/// treated as integral.
pub(crate) const INT_TOL: f64 = 1e-5;

/// Which constraint-assembly route a template was built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Moment-robust: sample moments plus concentration radii.
    Mra,
    /// Exact-moment: face coefficient moments taken as the truth.
    Ema,
    /// Scenario: one hard linear constraint per face sample.
    Sa,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mra => "mra",
            Method::Ema => "ema",
            Method::Sa => "sa",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mra" => Ok(Method::Mra),
            "ema" => Ok(Method::Ema),
            "sa" => Ok(Method::Sa),
            other => Err(Error::Config(format!(
                "unknown method '{other}', expected mra, ema, or sa"
            ))),
        }
    }
}

/// Binary variable indices for one disjunction group (one obstacle at one
/// time step). Exactly one binary per group is driven to 0 (face active);
/// the rest sit at 1 (face excluded, constraint released by big-M).
#[derive(Debug, Clone)]
pub struct GroupBinaries {
    pub time_index: usize,
    pub obstacle_index: usize,
    /// Program variable index of z for each face, in face order.
    pub z_vars: Vec<usize>,
}

/// All disjunction groups of a template, in (time, obstacle) order.
#[derive(Debug, Clone, Default)]
pub struct BinaryGroupSet {
    pub groups: Vec<GroupBinaries>,
}

impl BinaryGroupSet {
    pub fn n_binaries(&self) -> usize {
        self.groups.iter().map(|g| g.z_vars.len()).sum()
    }
}

/// Where each decision block lives in the stacked variable vector:
/// `[u_0..u_{N-1} | x_1..x_N | s_cost | aux_t... | z...]`.
#[derive(Debug, Clone)]
pub struct VarLayout {
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
    pub s_cost: usize,
    /// Per-time auxiliary bound on ||x_tilde_t||, present only where the
    /// moment-robust route needs one (some face at t has r1 > 0).
    pub aux: BTreeMap<usize, usize>,
}

impl VarLayout {
    /// Variable index of input component k at step t (t in 0..N).
    pub fn u_ix(&self, t: usize, k: usize) -> usize {
        debug_assert!(t < self.horizon && k < self.n_u);
        t * self.n_u + k
    }

    /// Variable index of state component k at step t (t in 1..=N).
    pub fn x_ix(&self, t: usize, k: usize) -> usize {
        debug_assert!(t >= 1 && t <= self.horizon && k < self.n_x);
        self.horizon * self.n_u + (t - 1) * self.n_x + k
    }
}

/// A fully assembled continuous relaxation plus its binary structure,
/// ready for branch-and-bound.
#[derive(Debug, Clone)]
pub struct Template<'a> {
    pub problem: &'a PlanningProblem,
    pub method: Method,
    pub program: ConeProgram,
    pub layout: VarLayout,
    pub groups: BinaryGroupSet,
    /// Allocation the face constraints were tightened with (a copy of
    /// `problem.risk` at assembly time).
    pub risk: RiskAllocation,
    pub node_limit: usize,
}

/// One selected face: the group at (time, obstacle) keeps face_index active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveFace {
    pub time_index: usize,
    pub obstacle_index: usize,
    pub face_index: usize,
}

/// Deterministic solve counters plus wall time. Wall time is measurement
/// noise, not part of the reproducible result; serialization of records
/// leaves it out.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolverStats {
    pub nodes_explored: usize,
    pub relaxations_solved: usize,
    pub wall_time_s: f64,
}

/// An integral solution of a planning template.
#[derive(Debug, Clone)]
pub struct PlanSolution {
    pub method: Method,
    pub u_seq: Vec<DVector<f64>>,
    /// States x_0..x_N from rolling the inputs through the dynamics.
    pub x_traj: Vec<DVector<f64>>,
    /// One active face per disjunction group, in group order.
    pub z_assignment: Vec<ActiveFace>,
    /// True cost of (x_traj, u_seq) under the problem's cost spec.
    pub objective: f64,
    pub risk: RiskAllocation,
    pub stats: SolverStats,
}

/// Serialization-friendly view of a solution; excludes wall time so that
/// records are byte-reproducible per seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRecord {
    pub method: Method,
    pub objective: f64,
    pub u: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub active_faces: Vec<ActiveFace>,
    pub risk: RiskAllocation,
    pub nodes_explored: usize,
    pub relaxations_solved: usize,
}

impl PlanSolution {
    pub fn to_record(&self) -> PlanRecord {
        PlanRecord {
            method: self.method,
            objective: self.objective,
            u: self.u_seq.iter().map(|v| v.iter().copied().collect()).collect(),
            x: self.x_traj.iter().map(|v| v.iter().copied().collect()).collect(),
            active_faces: self.z_assignment.clone(),
            risk: self.risk.clone(),
            nodes_explored: self.stats.nodes_explored,
            relaxations_solved: self.stats.relaxations_solved,
        }
    }
}

/// Assemble with the route picked at runtime.
pub fn assemble<'a>(method: Method, problem: &'a PlanningProblem) -> Result<Template<'a>> {
    match method {
        Method::Mra => assemble_mra(problem),
        Method::Ema => assemble_ema(problem),
        Method::Sa => assemble_sa(problem),
    }
}

/// Exact-moment route: each face constraint is the second-order cone
/// Psi^-1(1-eps) ||Sigma^(1/2) x~|| <= mu' x~ + M z, with whatever moments
/// the face carries taken at face value.
pub fn assemble_ema<'a>(problem: &'a PlanningProblem) -> Result<Template<'a>> {
    build_template(problem, Method::Ema)
}

/// Moment-robust route: sample moments inflated by the mean ball radius r1
/// and the covariance scale 1 + r2. Every face must be sample-based.
pub fn assemble_mra<'a>(problem: &'a PlanningProblem) -> Result<Template<'a>> {
    build_template(problem, Method::Mra)
}

/// Scenario route: one hard linear row per face draw, sharing the group
/// binaries. Every face must carry raw samples.
pub fn assemble_sa<'a>(problem: &'a PlanningProblem) -> Result<Template<'a>> {
    build_template(problem, Method::Sa)
}

/// Per-face constraint data in assembled form.
enum FaceForm {
    /// ||W x~|| <= mu' x~ + M z - r1 * aux_t (aux term only when r1 > 0).
    Soc {
        w: DMatrix<f64>,
        mu: DVector<f64>,
        r1: f64,
    },
    /// Rows d_r' x~ + M z >= 0, one per sample.
    Rows(Vec<DVector<f64>>),
}

fn face_form(face: &UncertainFace, eps: f64, beta: f64, method: Method) -> Result<FaceForm> {
    match method {
        Method::Ema => {
            let psi = norm_inv_cdf(1.0 - eps)?;
            Ok(FaceForm::Soc {
                w: face.cov_sqrt() * psi,
                mu: face.mean().clone(),
                r1: 0.0,
            })
        }
        Method::Mra => {
            let est = face.estimate().ok_or_else(|| {
                Error::Config(format!(
                    "moment-robust assembly needs sample-based faces, face ({},{},{}) has exact moments",
                    face.time_index, face.obstacle_index, face.face_index
                ))
            })?;
            let hs = robustify_halfspace(est, eps, beta)?;
            Ok(FaceForm::Soc {
                w: hs.cov_sqrt_scaled,
                mu: hs.mean_hat,
                r1: hs.r1,
            })
        }
        Method::Sa => {
            let samples = face.samples().ok_or_else(|| {
                Error::Config(format!(
                    "scenario assembly needs raw face samples, face ({},{},{}) has none",
                    face.time_index, face.obstacle_index, face.face_index
                ))
            })?;
            Ok(FaceForm::Rows(
                (0..samples.n_samples()).map(|r| samples.row(r)).collect(),
            ))
        }
    }
}

fn build_template<'a>(problem: &'a PlanningProblem, method: Method) -> Result<Template<'a>> {
    let sys = &problem.system;
    let n = sys.horizon();
    let n_x = sys.state_dim();
    let n_u = sys.input_dim();
    let risk = problem.risk.clone();

    // Prepare every face constraint up front so the auxiliary-variable needs
    // are known before variables are laid out.
    let mut forms: Vec<Vec<FaceForm>> = Vec::with_capacity(problem.obstacles.groups().len());
    let mut aux_times: BTreeSet<usize> = BTreeSet::new();
    for g in problem.obstacles.groups() {
        let mut group_forms = Vec::with_capacity(g.faces.len());
        for face in &g.faces {
            let eps = risk.get(face.time_index, face.obstacle_index, face.face_index)?;
            let form = face_form(face, eps, problem.beta, method)?;
            if let FaceForm::Soc { r1, .. } = &form {
                if *r1 > 0.0 {
                    aux_times.insert(g.time_index);
                }
            }
            group_forms.push(form);
        }
        forms.push(group_forms);
    }

    let mut program = ConeProgram::new(n * n_u + n * n_x);
    let s_cost = program.push_var();
    program.set_objective(s_cost, 1.0);
    let mut aux = BTreeMap::new();
    for &t in &aux_times {
        aux.insert(t, program.push_var());
    }
    let layout = VarLayout {
        n_x,
        n_u,
        horizon: n,
        s_cost,
        aux,
    };

    let mut groups = BinaryGroupSet::default();
    for g in problem.obstacles.groups() {
        let z_vars: Vec<usize> = (0..g.faces.len()).map(|_| program.push_var()).collect();
        for &z in &z_vars {
            program.set_bounds(z, 0.0, 1.0);
        }
        // Exactly one face active per group: sum z = F - 1.
        program.add_eq_row(
            z_vars.iter().map(|&z| (z, 1.0)).collect(),
            (z_vars.len() - 1) as f64,
        );
        groups.groups.push(GroupBinaries {
            time_index: g.time_index,
            obstacle_index: g.obstacle_index,
            z_vars,
        });
    }

    add_dynamics_rows(&mut program, &layout, problem);
    add_input_rows(&mut program, &layout, problem)?;
    if let Some(sb) = &problem.state_box {
        for t in 1..=n {
            for k in 0..n_x {
                program.set_bounds(layout.x_ix(t, k), sb.lower[k], sb.upper[k]);
            }
        }
    }
    add_cost_epigraph(&mut program, &layout, problem);
    for (t, &aux_var) in &layout.aux {
        add_norm_bound_soc(&mut program, &layout, *t, aux_var);
    }
    for (gi, g) in problem.obstacles.groups().iter().enumerate() {
        for (fi, form) in forms[gi].iter().enumerate() {
            let z_var = groups.groups[gi].z_vars[fi];
            add_face_rows(&mut program, &layout, problem.big_m, g.time_index, z_var, form);
        }
    }

    program.validate()?;
    Ok(Template {
        problem,
        method,
        program,
        layout,
        groups,
        risk,
        node_limit: NODE_LIMIT_DEFAULT,
    })
}

/// x_{t} - A_{t-1} x_{t-1} - B_{t-1} u_{t-1} = 0, with x_0 folded into the
/// right-hand side of the t = 1 block.
fn add_dynamics_rows(program: &mut ConeProgram, layout: &VarLayout, problem: &PlanningProblem) {
    let sys = &problem.system;
    for t in 1..=layout.horizon {
        let a = sys.a(t - 1);
        let b = sys.b(t - 1);
        for r in 0..layout.n_x {
            let mut row: SparseRow = Vec::new();
            for k in 0..layout.n_u {
                let coef = -b[(r, k)];
                if coef != 0.0 {
                    row.push((layout.u_ix(t - 1, k), coef));
                }
            }
            if t > 1 {
                for c in 0..layout.n_x {
                    let coef = -a[(r, c)];
                    if coef != 0.0 {
                        row.push((layout.x_ix(t - 1, c), coef));
                    }
                }
            }
            row.push((layout.x_ix(t, r), 1.0));
            let rhs = if t == 1 {
                (a * sys.initial_state())[r]
            } else {
                0.0
            };
            program.add_eq_row(row, rhs);
        }
    }
}

fn add_input_rows(program: &mut ConeProgram, layout: &VarLayout, problem: &PlanningProblem) -> Result<()> {
    match problem.system.input_set() {
        InputSet::Box { lower, upper } => {
            for t in 0..layout.horizon {
                for k in 0..layout.n_u {
                    program.set_bounds(layout.u_ix(t, k), lower[k], upper[k]);
                }
            }
        }
        InputSet::Polyhedron { a_mat, b_vec } => {
            for t in 0..layout.horizon {
                for (row_coefs, &rhs) in a_mat.iter().zip(b_vec) {
                    let row: SparseRow = row_coefs
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c != 0.0)
                        .map(|(k, &c)| (layout.u_ix(t, k), c))
                        .collect();
                    program.add_ineq_row(row, rhs);
                }
            }
        }
    }
    Ok(())
}

/// Stack the cost residual R y - r and bound its squared norm by s_cost.
fn add_cost_epigraph(program: &mut ConeProgram, layout: &VarLayout, problem: &PlanningProblem) {
    let mut rows: Vec<SparseRow> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    match &problem.cost {
        CostSpec::TerminalTracking { target } => {
            for r in 0..layout.n_x {
                rows.push(vec![(layout.x_ix(layout.horizon, r), 1.0)]);
                rhs.push(target[r]);
            }
        }
        CostSpec::StageTracking {
            output,
            target,
            input_weight,
        } => {
            for t in 1..=layout.horizon {
                for r in 0..output.nrows() {
                    let row: SparseRow = (0..layout.n_x)
                        .filter(|&c| output[(r, c)] != 0.0)
                        .map(|c| (layout.x_ix(t, c), output[(r, c)]))
                        .collect();
                    rows.push(row);
                    rhs.push(target[r]);
                }
            }
            if *input_weight > 0.0 {
                let w = input_weight.sqrt();
                for t in 0..layout.horizon {
                    for k in 0..layout.n_u {
                        rows.push(vec![(layout.u_ix(t, k), w)]);
                        rhs.push(0.0);
                    }
                }
            }
        }
    }
    program.add_epigraph_soc(rows, rhs, layout.s_cost);
}

/// ||x~_t|| <= aux_t, shared by every moment-robust face at step t.
fn add_norm_bound_soc(program: &mut ConeProgram, layout: &VarLayout, t: usize, aux_var: usize) {
    let mut g_rows: Vec<SparseRow> = (0..layout.n_x)
        .map(|k| vec![(layout.x_ix(t, k), 1.0)])
        .collect();
    let mut h = vec![0.0; layout.n_x];
    // Homogeneous coordinate contributes the constant row |1|.
    g_rows.push(Vec::new());
    h.push(1.0);
    program.add_soc(SocBlock {
        g_rows,
        h,
        c_row: vec![(aux_var, 1.0)],
        d: 0.0,
    });
}

fn add_face_rows(
    program: &mut ConeProgram,
    layout: &VarLayout,
    big_m: f64,
    t: usize,
    z_var: usize,
    form: &FaceForm,
) {
    match form {
        FaceForm::Soc { w, mu, r1 } => {
            let n_x = layout.n_x;
            let scale = w.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let mut c_row: SparseRow = (0..n_x)
                .filter(|&c| mu[c] != 0.0)
                .map(|c| (layout.x_ix(t, c), mu[c]))
                .collect();
            if *r1 > 0.0 {
                c_row.push((layout.aux[&t], -*r1));
            }
            c_row.push((z_var, big_m));
            let d = mu[n_x];
            if scale <= 1e-14 && *r1 == 0.0 {
                // Zero-covariance face: the cone collapses to the linear
                // big-M disjunct 0 <= mu' x~ + M z.
                let row: SparseRow = c_row.into_iter().map(|(v, c)| (v, -c)).collect();
                program.add_ineq_row(row, d);
                return;
            }
            let mut g_rows: Vec<SparseRow> = Vec::with_capacity(w.nrows());
            let mut h = Vec::with_capacity(w.nrows());
            for r in 0..w.nrows() {
                let row: SparseRow = (0..n_x)
                    .filter(|&c| w[(r, c)] != 0.0)
                    .map(|c| (layout.x_ix(t, c), w[(r, c)]))
                    .collect();
                g_rows.push(row);
                h.push(w[(r, n_x)]);
            }
            program.add_soc(SocBlock {
                g_rows,
                h,
                c_row,
                d,
            });
        }
        FaceForm::Rows(draws) => {
            let n_x = layout.n_x;
            for dvec in draws {
                let mut row: SparseRow = (0..n_x)
                    .filter(|&c| dvec[c] != 0.0)
                    .map(|c| (layout.x_ix(t, c), -dvec[c]))
                    .collect();
                row.push((z_var, -big_m));
                program.add_ineq_row(row, dvec[n_x]);
            }
        }
    }
}

/// Extract the input sequence from a stacked solution vector.
pub(crate) fn inputs_from_y(layout: &VarLayout, y: &[f64]) -> Vec<DVector<f64>> {
    (0..layout.horizon)
        .map(|t| DVector::from_fn(layout.n_u, |k, _| y[layout.u_ix(t, k)]))
        .collect()
}
