//! Greedy risk reallocation across the active faces of a solved plan.
//!
//! Faces that end up with visible slack at the planned trajectory give their
//! budget back (down to a floor); the freed amount is shared among the
//! binding active faces, weighted by how tight each one is. Every round ends
//! with a full re-solve; a worse or infeasible re-solve reverts to the best
//! plan seen so far.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{PlanningProblem, RiskAllocation, RISK_FLOOR};
use crate::planner::{assemble, solve_misocp, Method, PlanSolution};

#[derive(Debug, Clone, Copy)]
pub struct RedistributeOptions {
    /// Reallocation rounds before giving up on further gains.
    pub max_rounds: usize,
    /// Active-face margin above which its budget is considered idle.
    pub slack_threshold: f64,
    /// Relative cost decrease a round must deliver to keep iterating.
    pub min_improvement: f64,
}

impl Default for RedistributeOptions {
    fn default() -> Self {
        RedistributeOptions {
            max_rounds: 4,
            slack_threshold: 1e-3,
            min_improvement: 1e-6,
        }
    }
}

/// Improve `incumbent` by moving risk budget from slack active faces to
/// binding ones. Returns the best solution seen; never worse than the
/// incumbent. The scenario route has no per-face budgets to move.
pub fn redistribute_risk(
    method: Method,
    problem: &PlanningProblem,
    incumbent: &PlanSolution,
    options: &RedistributeOptions,
) -> Result<PlanSolution> {
    if method == Method::Sa {
        return Err(Error::Config(
            "risk redistribution does not apply to the scenario route".into(),
        ));
    }
    let mut best = incumbent.clone();
    let mut current_risk = incumbent.risk.clone();
    for _ in 0..options.max_rounds {
        let Some(new_risk) = reallocate(problem, &best, &current_risk, options)? else {
            break;
        };
        let reweighted = problem.clone().with_risk(new_risk.clone())?;
        let template = assemble(method, &reweighted)?;
        match solve_misocp(&template) {
            Ok(sol) => {
                let gain = best.objective - sol.objective;
                if gain > options.min_improvement * (1.0 + best.objective.abs()) {
                    best = sol;
                    current_risk = new_risk;
                } else {
                    if sol.objective < best.objective {
                        best = sol;
                    }
                    break;
                }
            }
            // A tightened slack face can push the problem infeasible; the
            // incumbent stays valid under its own allocation, keep it.
            Err(Error::Infeasible(_)) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

/// Build the next allocation, or `None` when there is nothing to move
/// (no binding active face, or no slack budget to free).
fn reallocate(
    problem: &PlanningProblem,
    sol: &PlanSolution,
    risk: &RiskAllocation,
    options: &RedistributeOptions,
) -> Result<Option<RiskAllocation>> {
    let groups = problem.obstacles.groups();
    if groups.len() != sol.z_assignment.len() {
        return Err(Error::Dimension(
            "solution face assignment does not match the obstacle set".into(),
        ));
    }
    let mut next: BTreeMap<(usize, usize, usize), f64> = risk.per_constraint.clone();
    let mut binding: Vec<((usize, usize, usize), f64)> = Vec::new();
    for (g, af) in groups.iter().zip(&sol.z_assignment) {
        let (t, j) = (g.time_index, g.obstacle_index);
        debug_assert_eq!((af.time_index, af.obstacle_index), (t, j));
        for i in 0..g.faces.len() {
            if i != af.face_index {
                // Excluded faces never constrain the plan.
                next.insert((t, j, i), RISK_FLOOR);
            }
        }
        let key = (t, j, af.face_index);
        let eps = risk.get(t, j, af.face_index)?;
        let x_tilde = PlanningProblem::homogeneous(&sol.x_traj[t]);
        let margin = g.faces[af.face_index].margin(eps, problem.beta, &x_tilde)?;
        if margin > options.slack_threshold {
            next.insert(key, RISK_FLOOR);
        } else {
            binding.push((key, 1.0 / (margin.max(0.0) + 1e-9)));
        }
    }
    if binding.is_empty() {
        return Ok(None);
    }

    let used: f64 = match risk.accounting {
        crate::model::AllocationAccounting::AllFaces => next.values().sum(),
        crate::model::AllocationAccounting::OnePerGroup => groups
            .iter()
            .map(|g| {
                (0..g.faces.len())
                    .map(|i| next[&(g.time_index, g.obstacle_index, i)])
                    .fold(0.0f64, f64::max)
            })
            .sum(),
    };
    let spare = risk.eps_total - used;
    if spare <= 1e-12 {
        return Ok(None);
    }
    let weight_sum: f64 = binding.iter().map(|(_, w)| w).sum();
    for (key, w) in &binding {
        let boosted = (next[key] + spare * w / weight_sum).min(0.49);
        next.insert(*key, boosted);
    }

    let candidate = RiskAllocation {
        eps_total: risk.eps_total,
        per_constraint: next,
        accounting: risk.accounting,
    };
    candidate.validate(&problem.obstacles)?;
    Ok(Some(candidate))
}
