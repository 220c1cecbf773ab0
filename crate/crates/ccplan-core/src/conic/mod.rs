//! Canonical continuous second-order-cone programs.
//!
//! A program holds a linear objective, linear equalities `A_eq y = b_eq`,
//! linear inequalities `A_in y <= b_in`, per-variable bounds, and
//! second-order-cone constraints `||G y + h||_2 <= c^T y + d`. Quadratic
//! objectives enter through an epigraph variable. The planner builds these
//! templates; `solve` hands them to the interior-point backend.

mod solver;

pub use solver::{compile, solve, Compiled};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// One sparse row: (column, coefficient) pairs with strictly increasing
/// column indices.
pub type SparseRow = Vec<(usize, f64)>;

/// `||G y + h||_2 <= c^T y + d` with G stored row-wise sparse.
#[derive(Debug, Clone)]
pub struct SocBlock {
    pub g_rows: Vec<SparseRow>,
    pub h: Vec<f64>,
    pub c_row: SparseRow,
    pub d: f64,
}

#[derive(Debug, Clone)]
pub struct ConeProgram {
    n_vars: usize,
    pub objective: Vec<f64>,
    eq_rows: Vec<SparseRow>,
    eq_rhs: Vec<f64>,
    ineq_rows: Vec<SparseRow>,
    ineq_rhs: Vec<f64>,
    soc: Vec<SocBlock>,
    bounds: Vec<(f64, f64)>,
}

impl ConeProgram {
    pub fn new(n_vars: usize) -> Self {
        ConeProgram {
            n_vars,
            objective: vec![0.0; n_vars],
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            soc: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Append a fresh variable (objective 0, unbounded) and return its index.
    pub fn push_var(&mut self) -> usize {
        self.n_vars += 1;
        self.objective.push(0.0);
        self.bounds.push((f64::NEG_INFINITY, f64::INFINITY));
        self.n_vars - 1
    }

    pub fn add_eq_row(&mut self, row: SparseRow, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    /// row . y <= rhs.
    pub fn add_ineq_row(&mut self, row: SparseRow, rhs: f64) {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
    }

    pub fn add_soc(&mut self, block: SocBlock) {
        self.soc.push(block);
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds[var] = (lower, upper);
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        self.bounds[var]
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    pub(crate) fn eq(&self) -> (&[SparseRow], &[f64]) {
        (&self.eq_rows, &self.eq_rhs)
    }

    pub(crate) fn ineq(&self) -> (&[SparseRow], &[f64]) {
        (&self.ineq_rows, &self.ineq_rhs)
    }

    pub(crate) fn soc_blocks(&self) -> &[SocBlock] {
        &self.soc
    }

    pub(crate) fn var_bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn n_constraint_rows(&self) -> usize {
        let bound_rows: usize = self
            .bounds
            .iter()
            .map(|(l, u)| l.is_finite() as usize + u.is_finite() as usize)
            .sum();
        self.eq_rows.len()
            + self.ineq_rows.len()
            + bound_rows
            + self.soc.iter().map(|s| s.g_rows.len() + 1).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vars == 0 {
            return Err(Error::Dimension("program needs at least one variable".into()));
        }
        let check_row = |row: &SparseRow| -> Result<()> {
            let mut last = None;
            for &(c, v) in row {
                if c >= self.n_vars {
                    return Err(Error::Dimension(format!(
                        "column {c} out of range for {} variables",
                        self.n_vars
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::Numerical("non-finite constraint coefficient".into()));
                }
                if let Some(p) = last {
                    if c <= p {
                        return Err(Error::Dimension(
                            "sparse row columns must strictly increase".into(),
                        ));
                    }
                }
                last = Some(c);
            }
            Ok(())
        };
        for row in self.eq_rows.iter().chain(&self.ineq_rows) {
            check_row(row)?;
        }
        for (rhs, what) in [(&self.eq_rhs, "equality"), (&self.ineq_rhs, "inequality")] {
            if rhs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite {what} right-hand side")));
            }
        }
        for blk in &self.soc {
            if blk.g_rows.len() != blk.h.len() {
                return Err(Error::Dimension("cone block G/h row mismatch".into()));
            }
            for row in blk.g_rows.iter().chain(std::iter::once(&blk.c_row)) {
                check_row(row)?;
            }
            if blk.h.iter().any(|v| !v.is_finite()) || !blk.d.is_finite() {
                return Err(Error::Numerical("non-finite cone block data".into()));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite objective coefficient".into()));
        }
        for &(l, u) in &self.bounds {
            if l > u {
                return Err(Error::Dimension("variable lower bound exceeds upper bound".into()));
            }
        }
        Ok(())
    }

    /// Worst absolute constraint violation of a candidate point (equalities,
    /// inequalities, bounds, and cone residuals).
    pub fn max_violation(&self, y: &[f64]) -> f64 {
        let dot = |row: &SparseRow| -> f64 { row.iter().map(|&(c, v)| v * y[c]).sum() };
        let mut worst = 0.0f64;
        for (row, &b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((dot(row) - b).abs());
        }
        for (row, &b) in self.ineq_rows.iter().zip(&self.ineq_rhs) {
            worst = worst.max(dot(row) - b);
        }
        for (k, &(l, u)) in self.bounds.iter().enumerate() {
            if l.is_finite() {
                worst = worst.max(l - y[k]);
            }
            if u.is_finite() {
                worst = worst.max(y[k] - u);
            }
        }
        for blk in &self.soc {
            let norm: f64 = blk
                .g_rows
                .iter()
                .zip(&blk.h)
                .map(|(row, &h)| {
                    let v = dot(row) + h;
                    v * v
                })
                .sum::<f64>()
                .sqrt();
            worst = worst.max(norm - (dot(&blk.c_row) + blk.d));
        }
        worst
    }

    /// Objective value of a candidate point.
    pub fn objective_at(&self, y: &[f64]) -> f64 {
        self.objective.iter().zip(y).map(|(c, v)| c * v).sum()
    }

    /// Add the epigraph encoding of a stacked least-squares cost:
    /// `sum_i (rows_i . y - rhs_i)^2 <= s`, written as the cone constraint
    /// `|| [2(Ry - r); 1 - s] || <= 1 + s`.
    pub fn add_epigraph_soc(&mut self, rows: Vec<SparseRow>, rhs: Vec<f64>, s_var: usize) {
        let mut g_rows: Vec<SparseRow> = Vec::with_capacity(rows.len() + 1);
        let mut h: Vec<f64> = Vec::with_capacity(rows.len() + 1);
        for (row, r) in rows.into_iter().zip(rhs) {
            g_rows.push(row.into_iter().map(|(c, v)| (c, 2.0 * v)).collect());
            h.push(-2.0 * r);
        }
        g_rows.push(vec![(s_var, -1.0)]);
        h.push(1.0);
        self.add_soc(SocBlock {
            g_rows,
            h,
            c_row: vec![(s_var, 1.0)],
            d: 1.0,
        });
    }
}

/// Result of lowering a quadratic cost to epigraph form.
#[derive(Debug, Clone)]
pub struct EpigraphCost {
    /// Index of the appended epigraph variable s.
    pub s_var: usize,
    /// s equals the quadratic plus this constant at every point, so
    /// the quadratic's value is `s - constant_offset`.
    pub constant_offset: f64,
}

/// Lower the quadratic `y_sub^T Q y_sub - 2 q^T y_sub` (over the listed
/// variables) into the program: appends an epigraph variable s with objective
/// weight 1 and the cone constraint making s an upper bound on the shifted
/// quadratic `||Q^{1/2} y_sub - r||^2` with `Q^{1/2} r = q`.
pub fn quadratic_to_epigraph(
    program: &mut ConeProgram,
    q_mat: &DMatrix<f64>,
    q_lin: &DVector<f64>,
    vars: &[usize],
) -> Result<EpigraphCost> {
    let n = q_mat.nrows();
    if q_mat.ncols() != n || q_lin.len() != n || vars.len() != n {
        return Err(Error::Dimension("quadratic cost dimension mismatch".into()));
    }
    let sym = crate::linalg::sym_part(q_mat);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let tol = 1e-8 * lam_max.max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(Error::Domain("quadratic cost is not positive semidefinite".into()));
    }
    // R = Q^{1/2}; r = pseudoinverse(R) q, valid only if q lies in range(Q).
    let half: DVector<f64> = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let r_mat = &eig.eigenvectors * DMatrix::from_diagonal(&half) * eig.eigenvectors.transpose();
    let inv_half: DVector<f64> =
        half.map(|s| if s > 1e-12 * lam_max.max(1.0).sqrt() { 1.0 / s } else { 0.0 });
    let r_vec =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_half) * eig.eigenvectors.transpose() * q_lin;
    if (&r_mat * &r_vec - q_lin).norm() > 1e-7 * q_lin.norm().max(1.0) {
        return Err(Error::Domain(
            "quadratic cost is unbounded below (linear term outside the curvature range)".into(),
        ));
    }
    let s_var = program.push_var();
    program.set_objective(s_var, 1.0);
    let mut rows: Vec<SparseRow> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: SparseRow = Vec::new();
        for jj in 0..n {
            let v = r_mat[(i, jj)];
            if v != 0.0 {
                row.push((vars[jj], v));
            }
        }
        row.sort_by_key(|&(c, _)| c);
        rows.push(row);
    }
    program.add_epigraph_soc(rows, r_vec.iter().copied().collect(), s_var);
    Ok(EpigraphCost {
        s_var,
        constant_offset: r_vec.norm_squared(),
    })
}

/// Terminal status of a cone solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: SolveStatus,
    pub y: Vec<f64>,
    /// +inf when infeasible, -inf when unbounded.
    pub objective_value: f64,
    /// Dual objective: a valid lower bound on the optimum at Optimal status.
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: u32,
}
