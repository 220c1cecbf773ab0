//! Serial best-first branch-and-bound over the face-selection binaries.
//!
//! The continuous relaxation is compiled once; every node only patches the
//! bound rows of its fixed binaries, so node solves share the symbolic
//! structure. Deterministic by construction: a total order on the node queue
//! (bound, then depth, then creation sequence) and first-wins tie-breaks.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use nalgebra::DVector;

use crate::conic::{compile, Compiled, ConeSolution, SolveStatus};
use crate::error::{Error, Result};
use crate::planner::{
    inputs_from_y, ActiveFace, PlanSolution, SolverStats, Template, INT_TOL,
};

struct Node {
    /// Bound-row patches (var, lo, hi) fixing binaries on this node's path.
    patches: Vec<(usize, f64, f64)>,
    /// Lower bound on any integral completion (relaxation dual objective).
    bound: f64,
    /// Relaxation solution at this node.
    y: Vec<f64>,
    depth: usize,
    seq: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for Node {}

impl Ord for Node {
    // BinaryHeap pops the maximum; make the "greatest" node the one to
    // explore next: smallest bound, then greatest depth, then smallest seq.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Incumbent {
    objective: f64,
    u_seq: Vec<DVector<f64>>,
    x_traj: Vec<DVector<f64>>,
    /// Active face index per group.
    choice: Vec<usize>,
}

/// Safe lower bound extracted from a solved relaxation. Weak duality makes
/// the dual objective a bound even when the iterate is slightly off.
fn node_bound(sol: &ConeSolution) -> f64 {
    if sol.dual_objective.is_finite() {
        sol.dual_objective
    } else {
        sol.objective_value - 1e-6 * (1.0 + sol.objective_value.abs())
    }
}

/// Closest-integer distance per binary of one group; also the active pick.
fn group_rounding(z_vals: &[f64]) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut active = 0;
    let mut best_val = f64::INFINITY;
    for (i, &v) in z_vals.iter().enumerate() {
        worst = worst.max((v - v.round()).abs());
        if v < best_val {
            best_val = v;
            active = i;
        }
    }
    (worst, active)
}

/// Solve the mixed-integer program behind a template to global optimality.
///
/// Returns the best integral solution, `Error::Infeasible` when no binary
/// assignment admits a feasible trajectory, and `Error::NodeLimit` (carrying
/// the best incumbent found, if any) when the node budget runs out first.
pub fn solve_misocp(template: &Template<'_>) -> Result<PlanSolution> {
    let start = Instant::now();
    let all_z: Vec<usize> = template
        .groups
        .groups
        .iter()
        .flat_map(|g| g.z_vars.iter().copied())
        .collect();
    let compiled = compile(&template.program, &all_z)?;
    let mut stats = SolverStats::default();

    let root = solve_relaxation(&compiled, &[], &mut stats)?;
    let root = match root {
        Some(sol) => sol,
        None => {
            return Err(Error::Infeasible(format!(
                "{} relaxation has no feasible point",
                template.method
            )))
        }
    };

    let mut incumbent: Option<Incumbent> = None;
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(Node {
        patches: Vec::new(),
        bound: node_bound(&root),
        y: root.y,
        depth: 0,
        seq,
    });

    while let Some(node) = heap.pop() {
        if let Some(inc) = &incumbent {
            if node.bound >= inc.objective - prune_tol(inc.objective) {
                // Best-first order: every queued node is at least this bad.
                break;
            }
        }
        if stats.nodes_explored >= template.node_limit {
            let best = incumbent
                .map(|inc| Box::new(build_solution(template, inc, &stats, start)));
            return Err(Error::NodeLimit {
                limit: template.node_limit,
                best,
            });
        }
        stats.nodes_explored += 1;

        // Most fractional group member; first (time, obstacle, face) wins ties.
        let mut branch: Option<(usize, usize, f64)> = None;
        let mut integral_choice: Vec<usize> = Vec::with_capacity(template.groups.groups.len());
        let mut all_integral = true;
        let mut max_deviation = 0.0f64;
        for (gi, g) in template.groups.groups.iter().enumerate() {
            let z_vals: Vec<f64> = g.z_vars.iter().map(|&v| node.y[v]).collect();
            let (worst, active) = group_rounding(&z_vals);
            max_deviation = max_deviation.max(worst);
            integral_choice.push(active);
            if worst > INT_TOL {
                all_integral = false;
            }
            for (fi, &v) in z_vals.iter().enumerate() {
                let frac = (v - 0.5).abs();
                if branch.map_or(true, |(_, _, f)| frac < f) {
                    branch = Some((gi, fi, frac));
                }
            }
        }

        if all_integral {
            let candidate = if max_deviation <= 1e-7 {
                // The relaxation already answered exactly (e.g. every group
                // pinned by its sum row); no cleanup solve needed.
                Some((node.y.clone(), integral_choice.clone()))
            } else {
                let patches = fixing_patches(template, &integral_choice);
                solve_relaxation(&compiled, &patches, &mut stats)?
                    .map(|sol| (sol.y, integral_choice.clone()))
            };
            if let Some((y, choice)) = candidate {
                accept_candidate(template, &y, choice, &mut incumbent)?;
            }
            continue;
        }

        let (gi, fi, _) = branch.expect("non-integral node has a branch target");
        let group = &template.groups.groups[gi];
        // Child 1: face fi active (z = 0, siblings excluded by the sum row).
        let mut active_patches = node.patches.clone();
        for (k, &z) in group.z_vars.iter().enumerate() {
            active_patches.push(if k == fi { (z, 0.0, 0.0) } else { (z, 1.0, 1.0) });
        }
        // Child 2: face fi excluded (z = 1), siblings stay free.
        let mut excluded_patches = node.patches.clone();
        excluded_patches.push((group.z_vars[fi], 1.0, 1.0));

        for patches in [active_patches, excluded_patches] {
            if let Some(sol) = solve_relaxation(&compiled, &patches, &mut stats)? {
                let bound = node_bound(&sol);
                let keep = incumbent
                    .as_ref()
                    .map_or(true, |inc| bound < inc.objective - prune_tol(inc.objective));
                if keep {
                    seq += 1;
                    heap.push(Node {
                        patches,
                        bound,
                        y: sol.y,
                        depth: node.depth + 1,
                        seq,
                    });
                }
            }
        }
    }

    match incumbent {
        Some(inc) => Ok(build_solution(template, inc, &stats, start)),
        None => Err(Error::Infeasible(
            "no face assignment admits a feasible trajectory".into(),
        )),
    }
}

fn prune_tol(objective: f64) -> f64 {
    1e-9 * (1.0 + objective.abs())
}

/// Fix every group to its chosen face.
fn fixing_patches(template: &Template<'_>, choice: &[usize]) -> Vec<(usize, f64, f64)> {
    let mut patches = Vec::new();
    for (g, &active) in template.groups.groups.iter().zip(choice) {
        for (k, &z) in g.z_vars.iter().enumerate() {
            patches.push(if k == active { (z, 0.0, 0.0) } else { (z, 1.0, 1.0) });
        }
    }
    patches
}

/// One relaxation solve. `Ok(None)` means (certified) infeasible or unbounded
/// at this node; hard numerical failures propagate as errors.
fn solve_relaxation(
    compiled: &Compiled,
    patches: &[(usize, f64, f64)],
    stats: &mut SolverStats,
) -> Result<Option<ConeSolution>> {
    stats.relaxations_solved += 1;
    let sol = compiled.solve_with_bounds(patches)?;
    match sol.status {
        SolveStatus::Optimal => Ok(Some(sol)),
        SolveStatus::Infeasible => Ok(None),
        // The epigraph objective is bounded below by zero, so an unbounded
        // certificate can only be numerical noise; treat it as a dead node.
        SolveStatus::Unbounded => Ok(None),
        SolveStatus::NumericalFailure => Err(Error::Numerical(format!(
            "relaxation solve did not reach the requested accuracy \
             (primal {:.2e}, dual {:.2e}, gap {:.2e}, {} iterations)",
            sol.primal_residual, sol.dual_residual, sol.gap, sol.iterations
        ))),
    }
}

fn accept_candidate(
    template: &Template<'_>,
    y: &[f64],
    choice: Vec<usize>,
    incumbent: &mut Option<Incumbent>,
) -> Result<()> {
    let u_seq = inputs_from_y(&template.layout, y);
    let x_traj = template.problem.system.rollout(&u_seq)?;
    let objective = template.problem.cost.evaluate(&x_traj, &u_seq);
    let better = incumbent
        .as_ref()
        .map_or(true, |inc| objective < inc.objective);
    if better {
        *incumbent = Some(Incumbent {
            objective,
            u_seq,
            x_traj,
            choice,
        });
    }
    Ok(())
}

fn build_solution(
    template: &Template<'_>,
    inc: Incumbent,
    stats: &SolverStats,
    start: Instant,
) -> PlanSolution {
    let z_assignment = template
        .groups
        .groups
        .iter()
        .zip(&inc.choice)
        .map(|(g, &active)| ActiveFace {
            time_index: g.time_index,
            obstacle_index: g.obstacle_index,
            face_index: active,
        })
        .collect();
    PlanSolution {
        method: template.method,
        u_seq: inc.u_seq,
        x_traj: inc.x_traj,
        z_assignment,
        objective: inc.objective,
        risk: template.risk.clone(),
        stats: SolverStats {
            nodes_explored: stats.nodes_explored,
            relaxations_solved: stats.relaxations_solved,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    }
}
