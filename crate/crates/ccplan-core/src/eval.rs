//! Monte-Carlo evaluation against the true distributions, the two bundled
//! case studies, and the sample-count sweep.
//!
//! This module is the only place that touches true face distributions next
//! to plans; planners only ever receive sample sets or explicitly labeled
//! idealized moments. Reports carry the seed manifest and config digest they
//! were produced under, and every serialized output is free of wall-clock
//! measurements so that reruns are byte-identical; timing data goes to
//! separate `*.timings.*` files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{run_ccrh, CcrhRun};
use crate::concentration::scalar_example_solutions;
use crate::error::{Error, Result};
use crate::model::{ObstacleSet, PlanningProblem};
use crate::planner::{
    assemble, redistribute_risk, solve_misocp, Method, PlanRecord, PlanSolution,
    RedistributeOptions,
};
use crate::scenario::{
    closed_loop_spec, config_digest, open_loop_exact, open_loop_sampled_with, wall_beliefs,
    ScenarioConfig, ScenarioKind,
};
use crate::stats::{derive_seed, norm_inv_cdf, rng_for, GaussianBelief};

/// True face-coefficient distributions, known only to the evaluator.
#[derive(Debug, Clone)]
pub enum TrueFaces {
    /// One distribution per (obstacle, face); each Monte-Carlo realization
    /// draws every face once and shares the draw across all times. This is
    /// the static-geometry semantics: the world has one wall, not one wall
    /// per time step.
    StaticShared {
        faces: BTreeMap<(usize, usize), GaussianBelief>,
    },
    /// Independent distribution per (time, obstacle, face).
    PerTime {
        faces: BTreeMap<(usize, usize, usize), GaussianBelief>,
    },
}

impl TrueFaces {
    /// The static-walls truth of an open-loop scenario config.
    pub fn from_static_config(cfg: &ScenarioConfig) -> Result<Self> {
        let beliefs = wall_beliefs(cfg)?;
        let faces = beliefs
            .into_iter()
            .enumerate()
            .map(|(i, b)| ((0usize, i), b))
            .collect();
        Ok(TrueFaces::StaticShared { faces })
    }

    fn belief_for(&self, t: usize, j: usize, i: usize) -> Option<&GaussianBelief> {
        match self {
            TrueFaces::StaticShared { faces } => faces.get(&(j, i)),
            TrueFaces::PerTime { faces } => faces.get(&(t, j, i)),
        }
    }
}

/// A violation probability estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationEstimate {
    pub n_mc: usize,
    pub n_violations: usize,
    pub p_hat: f64,
    pub std_err: f64,
}

/// Estimate the probability that the planned trajectory enters any obstacle
/// at any time, under the true face distributions. A realization violates
/// when some (time, obstacle) group has every face value negative at the
/// planned state.
pub fn mc_violation<R: Rng + ?Sized>(
    x_traj: &[DVector<f64>],
    obstacles: &ObstacleSet,
    truth: &TrueFaces,
    n_mc: usize,
    rng: &mut R,
) -> Result<ViolationEstimate> {
    if n_mc < 100 {
        return Err(Error::Config(format!(
            "violation estimates need at least 100 realizations, got {n_mc}"
        )));
    }
    // Pre-resolve beliefs and factor the covariances once.
    struct Draws {
        mean: DVector<f64>,
        sqrt: DMatrix<f64>,
        value: DVector<f64>,
    }
    let mut keyed: BTreeMap<(usize, usize, usize), Draws> = BTreeMap::new();
    let mut x_tildes: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for g in obstacles.groups() {
        if g.time_index >= x_traj.len() {
            return Err(Error::Dimension(format!(
                "group at time {} but the trajectory has {} states",
                g.time_index,
                x_traj.len()
            )));
        }
        x_tildes
            .entry(g.time_index)
            .or_insert_with(|| PlanningProblem::homogeneous(&x_traj[g.time_index]));
        for (i, f) in g.faces.iter().enumerate() {
            let belief = truth
                .belief_for(g.time_index, g.obstacle_index, i)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no true distribution for face ({}, {}, {i})",
                        g.time_index, g.obstacle_index
                    ))
                })?;
            if belief.dim() != f.dim() {
                return Err(Error::Dimension("true face dimension mismatch".into()));
            }
            let key = match truth {
                TrueFaces::StaticShared { .. } => (0, g.obstacle_index, i),
                TrueFaces::PerTime { .. } => (g.time_index, g.obstacle_index, i),
            };
            keyed.entry(key).or_insert_with(|| Draws {
                mean: belief.mean.clone(),
                sqrt: belief.cov_sqrt(),
                value: DVector::zeros(belief.dim()),
            });
        }
    }

    let mut n_violations = 0usize;
    let mut z = DVector::zeros(0);
    for _ in 0..n_mc {
        for d in keyed.values_mut() {
            let dim = d.mean.len();
            if z.len() != dim {
                z = DVector::zeros(dim);
            }
            for k in 0..dim {
                z[k] = rng.sample(rand_distr::StandardNormal);
            }
            d.value = &d.mean + &d.sqrt * &z;
        }
        let mut violated = false;
        'groups: for g in obstacles.groups() {
            let x_tilde = &x_tildes[&g.time_index];
            for i in 0..g.faces.len() {
                let key = match truth {
                    TrueFaces::StaticShared { .. } => (0, g.obstacle_index, i),
                    TrueFaces::PerTime { .. } => (g.time_index, g.obstacle_index, i),
                };
                if keyed[&key].value.dot(x_tilde) >= 0.0 {
                    continue 'groups;
                }
            }
            violated = true;
            break;
        }
        if violated {
            n_violations += 1;
        }
    }
    let p = n_violations as f64 / n_mc as f64;
    Ok(ViolationEstimate {
        n_mc,
        n_violations,
        p_hat: p,
        std_err: (p * (1.0 - p) / n_mc as f64).sqrt(),
    })
}

/// The derived child seeds a study ran with; enough to reproduce any single
/// instance or the whole report bit-for-bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub master_seed: u64,
    /// Tag the children were derived under.
    pub stream: String,
    pub children: Vec<u64>,
}

impl SeedManifest {
    fn derive(master_seed: u64, stream: &str, n: usize) -> Self {
        SeedManifest {
            master_seed,
            stream: stream.to_string(),
            children: (0..n)
                .map(|k| derive_seed(master_seed, stream, k as u64))
                .collect(),
        }
    }
}

/// One planned instance of an open-loop study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRow {
    pub method: Method,
    pub instance: usize,
    pub seed: u64,
    pub feasible: bool,
    pub objective: Option<f64>,
    pub violation: Option<f64>,
    pub violation_stderr: Option<f64>,
    /// Wall-clock solve time; deliberately absent from serialized output.
    #[serde(skip)]
    pub solve_time_s: f64,
}

/// Per-method aggregate of an open-loop study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub n_instances: usize,
    pub n_mc: usize,
    pub n_infeasible: usize,
    /// Mean over feasible instances, with the pooled MC standard error.
    pub violation_mean: Option<f64>,
    pub violation_stderr: Option<f64>,
    pub violation_median: Option<f64>,
    pub cost_mean: Option<f64>,
    pub cost_median: Option<f64>,
    pub cost_q1: Option<f64>,
    pub cost_q3: Option<f64>,
    pub seeds: SeedManifest,
    /// Wall-clock mean; deliberately absent from serialized output.
    #[serde(skip)]
    pub solver_time_mean_s: f64,
}

/// Everything the open-loop case study produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenLoopStudy {
    pub config_name: String,
    pub config_digest: String,
    pub reports: Vec<EvalReport>,
    pub rows: Vec<InstanceRow>,
    /// First-instance plans per method, for trajectory plots.
    pub plans: BTreeMap<String, PlanRecord>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted_values(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Solve one instance, optionally chasing the redistribution improvement.
/// `Ok(None)` marks a certified-infeasible instance.
fn solve_instance(
    method: Method,
    problem: &PlanningProblem,
    redistribute: bool,
    node_limit: Option<usize>,
) -> Result<Option<PlanSolution>> {
    let mut template = assemble(method, problem)?;
    if let Some(nl) = node_limit {
        template.node_limit = nl;
    }
    let sol = match solve_misocp(&template) {
        Ok(s) => s,
        Err(Error::NodeLimit { best: Some(b), .. }) => *b,
        Err(Error::Infeasible(_)) | Err(Error::NodeLimit { best: None, .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if redistribute && method != Method::Sa {
        return Ok(Some(redistribute_risk(
            method,
            problem,
            &sol,
            &RedistributeOptions::default(),
        )?));
    }
    Ok(Some(sol))
}

fn report_from_rows(
    method: Method,
    rows: &[InstanceRow],
    n_mc: usize,
    seeds: SeedManifest,
) -> EvalReport {
    let mine: Vec<&InstanceRow> = rows.iter().filter(|r| r.method == method).collect();
    let feasible: Vec<&&InstanceRow> = mine.iter().filter(|r| r.feasible).collect();
    let n_infeasible = mine.len() - feasible.len();
    let costs = sorted_values(feasible.iter().filter_map(|r| r.objective));
    let violations = sorted_values(feasible.iter().filter_map(|r| r.violation));
    let pooled_var: f64 = feasible
        .iter()
        .filter_map(|r| r.violation_stderr)
        .map(|s| s * s)
        .sum();
    let time_mean = if feasible.is_empty() {
        0.0
    } else {
        feasible.iter().map(|r| r.solve_time_s).sum::<f64>() / feasible.len() as f64
    };
    EvalReport {
        method,
        n_instances: mine.len(),
        n_mc,
        n_infeasible,
        violation_mean: (!violations.is_empty())
            .then(|| violations.iter().sum::<f64>() / violations.len() as f64),
        violation_stderr: (!violations.is_empty())
            .then(|| pooled_var.sqrt() / violations.len() as f64),
        violation_median: (!violations.is_empty()).then(|| percentile(&violations, 0.5)),
        cost_mean: (!costs.is_empty()).then(|| costs.iter().sum::<f64>() / costs.len() as f64),
        cost_median: (!costs.is_empty()).then(|| percentile(&costs, 0.5)),
        cost_q1: (!costs.is_empty()).then(|| percentile(&costs, 0.25)),
        cost_q3: (!costs.is_empty()).then(|| percentile(&costs, 0.75)),
        seeds,
        solver_time_mean_s: time_mean,
    }
}

/// Run the static-walls case study: all three methods on `n_instances`
/// independent sample draws, each plan Monte-Carlo-checked against the true
/// walls. The exact-moment route is the idealized baseline and sees the true
/// moments; the sample-based routes see only the per-instance draws.
pub fn case_study_open_loop(
    cfg: &ScenarioConfig,
    n_instances: usize,
    n_mc: usize,
    master_seed: u64,
) -> Result<OpenLoopStudy> {
    cfg.validate()?;
    if cfg.kind != ScenarioKind::OpenLoop {
        return Err(Error::Config("open-loop study needs an open-loop scenario".into()));
    }
    if n_instances == 0 {
        return Err(Error::Config("need at least one instance".into()));
    }
    let truth = TrueFaces::from_static_config(cfg)?;
    let exact_problem = open_loop_exact(cfg)?;
    let node_limit = cfg.solver.node_limit;

    // The idealized baseline does not depend on the instance draws; solve it
    // once and share the plan across instances.
    let t0 = Instant::now();
    let ema_sol = solve_instance(Method::Ema, &exact_problem, cfg.risk.redistribute, node_limit)?;
    let ema_time = t0.elapsed().as_secs_f64();

    let seeds = SeedManifest::derive(master_seed, "instance", n_instances);
    let per_instance: Vec<Vec<InstanceRow>> = (0..n_instances)
        .into_par_iter()
        .map(|k| -> Result<Vec<InstanceRow>> {
            let seed_k = seeds.children[k];
            let sampled = open_loop_sampled_with(cfg, seed_k, None)?;
            let mut rows = Vec::with_capacity(3);
            for (m_ix, method) in [Method::Ema, Method::Mra, Method::Sa].into_iter().enumerate() {
                let (sol, time_s) = match method {
                    Method::Ema => (ema_sol.clone(), ema_time),
                    Method::Mra => {
                        let t = Instant::now();
                        let s =
                            solve_instance(method, &sampled, cfg.risk.redistribute, node_limit)?;
                        (s, t.elapsed().as_secs_f64())
                    }
                    Method::Sa => {
                        let t = Instant::now();
                        let s = solve_instance(method, &sampled, false, node_limit)?;
                        (s, t.elapsed().as_secs_f64())
                    }
                };
                let mut row = InstanceRow {
                    method,
                    instance: k,
                    seed: seed_k,
                    feasible: sol.is_some(),
                    objective: sol.as_ref().map(|s| s.objective),
                    violation: None,
                    violation_stderr: None,
                    solve_time_s: time_s,
                };
                if let Some(sol) = &sol {
                    let mut rng = rng_for(seed_k, "mc-violation", m_ix as u64);
                    let est = mc_violation(
                        &sol.x_traj,
                        &exact_problem.obstacles,
                        &truth,
                        n_mc,
                        &mut rng,
                    )?;
                    row.violation = Some(est.p_hat);
                    row.violation_stderr = Some(est.std_err);
                }
                rows.push(row);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<InstanceRow> = per_instance.into_iter().flatten().collect();
    let mut plans = BTreeMap::new();
    {
        // Re-derive the first instance's plans for the trajectory figure.
        let seed_0 = seeds.children[0];
        let sampled = open_loop_sampled_with(cfg, seed_0, None)?;
        if let Some(s) = &ema_sol {
            plans.insert(Method::Ema.to_string(), s.to_record());
        }
        if let Some(s) = solve_instance(Method::Mra, &sampled, cfg.risk.redistribute, node_limit)? {
            plans.insert(Method::Mra.to_string(), s.to_record());
        }
        if let Some(s) = solve_instance(Method::Sa, &sampled, false, node_limit)? {
            plans.insert(Method::Sa.to_string(), s.to_record());
        }
    }
    let reports = [Method::Ema, Method::Mra, Method::Sa]
        .into_iter()
        .map(|m| report_from_rows(m, &rows, n_mc, seeds.clone()))
        .collect();
    Ok(OpenLoopStudy {
        config_name: cfg.name.clone(),
        config_digest: config_digest(cfg),
        reports,
        rows,
        plans,
    })
}

/// One (sample count, method, instance) cell of the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_s: usize,
    pub method: Method,
    pub instance: usize,
    pub seed: u64,
    pub feasible: bool,
    pub objective: Option<f64>,
    #[serde(skip)]
    pub solve_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepMethodStats {
    pub method: Method,
    pub n_feasible: usize,
    pub mean_cost: Option<f64>,
    #[serde(skip)]
    pub mean_solve_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepLevelStats {
    pub n_s: usize,
    pub methods: Vec<SweepMethodStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepStudy {
    pub config_name: String,
    pub config_digest: String,
    pub n_instances: usize,
    pub seeds: SeedManifest,
    pub levels: Vec<SweepLevelStats>,
    pub rows: Vec<SweepRow>,
}

/// Default sweep grid.
pub const SWEEP_GRID: [usize; 4] = [100, 1_000, 10_000, 100_000];

/// Cost/size scaling study: re-plan the static-walls scenario at each sample
/// count in `ns_grid` (strictly ascending). Instances are paired across
/// levels through shared per-instance seeds. Runs sequentially so the solve
/// times are comparable.
pub fn sweep_sample_count(
    cfg: &ScenarioConfig,
    ns_grid: &[usize],
    n_instances: usize,
    master_seed: u64,
) -> Result<SweepStudy> {
    cfg.validate()?;
    if cfg.kind != ScenarioKind::OpenLoop {
        return Err(Error::Config("the sweep needs an open-loop scenario".into()));
    }
    if ns_grid.is_empty() || ns_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sample-count grid must be strictly ascending".into()));
    }
    if n_instances == 0 {
        return Err(Error::Config("need at least one instance".into()));
    }
    let exact_problem = open_loop_exact(cfg)?;
    let node_limit = cfg.solver.node_limit;
    let seeds = SeedManifest::derive(master_seed, "sweep-instance", n_instances);

    // Warm-up so the first timed solve does not pay one-time setup costs.
    solve_instance(Method::Ema, &exact_problem, false, node_limit)?;

    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for &n_s in ns_grid {
        for k in 0..n_instances {
            let seed_k = seeds.children[k];
            let sampled = open_loop_sampled_with(cfg, seed_k, Some(n_s))?;
            for method in [Method::Ema, Method::Mra, Method::Sa] {
                let problem = if method == Method::Ema { &exact_problem } else { &sampled };
                let redistribute = cfg.risk.redistribute && method != Method::Sa;
                let t = Instant::now();
                let sol = solve_instance(method, problem, redistribute, node_limit)?;
                let dt = t.elapsed().as_secs_f64();
                rows.push(SweepRow {
                    n_s,
                    method,
                    instance: k,
                    seed: seed_k,
                    feasible: sol.is_some(),
                    objective: sol.map(|s| s.objective),
                    solve_time_s: dt,
                });
            }
        }
        let methods = [Method::Ema, Method::Mra, Method::Sa]
            .into_iter()
            .map(|m| {
                let cell: Vec<&SweepRow> = rows
                    .iter()
                    .filter(|r| r.n_s == n_s && r.method == m && r.feasible)
                    .collect();
                SweepMethodStats {
                    method: m,
                    n_feasible: cell.len(),
                    mean_cost: (!cell.is_empty()).then(|| {
                        cell.iter().filter_map(|r| r.objective).sum::<f64>() / cell.len() as f64
                    }),
                    mean_solve_time_s: if cell.is_empty() {
                        0.0
                    } else {
                        cell.iter().map(|r| r.solve_time_s).sum::<f64>() / cell.len() as f64
                    },
                }
            })
            .collect();
        levels.push(SweepLevelStats { n_s, methods });
    }
    Ok(SweepStudy {
        config_name: cfg.name.clone(),
        config_digest: config_digest(cfg),
        n_instances,
        seeds,
        levels,
        rows,
    })
}

/// One closed-loop run, summarized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub completed: bool,
    pub collided: bool,
    pub aborted_at: Option<usize>,
    pub fallback_steps: usize,
    pub initial_cost: Option<f64>,
    pub closed_cost: Option<f64>,
}

/// Aggregate of the closed-loop case study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoopStudy {
    pub config_name: String,
    pub config_digest: String,
    pub method: Method,
    pub n_runs: usize,
    pub seeds: SeedManifest,
    pub rows: Vec<RunRow>,
    pub n_completed: usize,
    pub n_aborted: usize,
    pub n_collided: usize,
    /// Fraction of completed runs without a collision.
    pub safety_rate: Option<f64>,
    pub safety_stderr: Option<f64>,
    /// Runs where both costs exist and re-planning beat the initial plan.
    pub n_cost_compared: usize,
    pub n_cost_improved: usize,
    pub improved_fraction: Option<f64>,
    pub closed_cost_mean: Option<f64>,
    pub initial_cost_mean: Option<f64>,
    /// Mean over completed runs: per-coordinate std of the tau = 0 obstacle
    /// cloud at each lookahead step (uncertainty with no measurements).
    pub open_loop_std_mean: Vec<Vec<f64>>,
    /// Mean over completed runs: per-coordinate std of the one-step-ahead
    /// cloud at each outer step (uncertainty with measurements folded in).
    pub closed_pred_std_mean: Vec<Vec<f64>>,
    /// The first completed run, in full, for trajectory plots.
    pub representative: Option<CcrhRun>,
}

fn mean_curves(curves: Vec<&Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    let steps = first.len();
    let dims = first.first().map_or(0, |v| v.len());
    let mut out = vec![vec![0.0; dims]; steps];
    for c in &curves {
        for (t, v) in c.iter().enumerate() {
            for (d, x) in v.iter().enumerate() {
                out[t][d] += x;
            }
        }
    }
    let n = curves.len() as f64;
    for row in &mut out {
        for x in row.iter_mut() {
            *x /= n;
        }
    }
    out
}

fn summarize_runs(
    cfg: &ScenarioConfig,
    method: Method,
    seeds: SeedManifest,
    runs: Vec<CcrhRun>,
) -> ClosedLoopStudy {
    let rows: Vec<RunRow> = runs
        .iter()
        .enumerate()
        .map(|(k, r)| RunRow {
            run: k,
            seed: seeds.children[k],
            completed: r.completed,
            collided: r.collided,
            aborted_at: r.aborted_at,
            fallback_steps: r.records.iter().filter(|s| s.fallback).count(),
            initial_cost: r.initial_open_loop_cost,
            closed_cost: r.closed_loop_cost,
        })
        .collect();
    let completed: Vec<&CcrhRun> = runs.iter().filter(|r| r.completed).collect();
    let n_completed = completed.len();
    let n_collided = completed.iter().filter(|r| r.collided).count();
    let safety_rate =
        (n_completed > 0).then(|| (n_completed - n_collided) as f64 / n_completed as f64);
    let safety_stderr = safety_rate.map(|p| (p * (1.0 - p) / n_completed as f64).sqrt());
    let compared: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.completed)
        .filter_map(|r| Some((r.initial_cost?, r.closed_cost?)))
        .collect();
    let n_cost_improved = compared.iter().filter(|(init, closed)| closed < init).count();
    let closed_costs = sorted_values(compared.iter().map(|(_, c)| *c));
    let initial_costs = sorted_values(compared.iter().map(|(i, _)| *i));
    let representative = completed.first().map(|r| (*r).clone());
    let pred_curves: Vec<Vec<Vec<f64>>> = completed
        .iter()
        .map(|r| r.records.iter().map(|s| s.pred_std.clone()).collect())
        .collect();
    ClosedLoopStudy {
        config_name: cfg.name.clone(),
        config_digest: config_digest(cfg),
        method,
        n_runs: runs.len(),
        n_completed,
        n_aborted: runs.len() - n_completed,
        n_collided,
        safety_rate,
        safety_stderr,
        n_cost_compared: compared.len(),
        n_cost_improved,
        improved_fraction: (!compared.is_empty())
            .then(|| n_cost_improved as f64 / compared.len() as f64),
        closed_cost_mean: (!closed_costs.is_empty())
            .then(|| closed_costs.iter().sum::<f64>() / closed_costs.len() as f64),
        initial_cost_mean: (!initial_costs.is_empty())
            .then(|| initial_costs.iter().sum::<f64>() / initial_costs.len() as f64),
        open_loop_std_mean: mean_curves(completed.iter().map(|r| &r.open_loop_std).collect()),
        closed_pred_std_mean: mean_curves(pred_curves.iter().collect()),
        seeds,
        rows,
        representative,
    }
}

/// Run the receding-horizon case study: `n_runs` fully independent runs
/// (fresh sample pools, fresh world realization per run), aggregated into
/// safety, cost-improvement, and uncertainty-curve statistics.
pub fn case_study_closed_loop(
    cfg: &ScenarioConfig,
    method: Method,
    n_runs: usize,
    master_seed: u64,
) -> Result<ClosedLoopStudy> {
    cfg.validate()?;
    if cfg.kind != ScenarioKind::ClosedLoop {
        return Err(Error::Config("closed-loop study needs a closed-loop scenario".into()));
    }
    if n_runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    let seeds = SeedManifest::derive(master_seed, "run", n_runs);
    let runs: Vec<CcrhRun> = (0..n_runs)
        .into_par_iter()
        .map(|k| -> Result<CcrhRun> {
            let seed_k = seeds.children[k];
            let spec = closed_loop_spec(cfg, method, seed_k)?;
            run_ccrh(&spec, seed_k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_runs(cfg, method, seeds, runs))
}

/// The one-dimensional estimated-mean pathology: the plug-in solution of a
/// scalar chance constraint violates the true constraint with probability
/// 1/2 no matter how many samples went into the estimate, while the
/// t-corrected solution violates with probability at most beta.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathologyReport {
    pub n_reps: usize,
    pub n_samples: usize,
    pub eps: f64,
    pub beta: f64,
    pub naive_freq: f64,
    pub naive_stderr: f64,
    pub robust_freq: f64,
    pub robust_stderr: f64,
    pub master_seed: u64,
}

pub fn example_pathology(
    n_reps: usize,
    n_samples: usize,
    eps: f64,
    beta: f64,
    master_seed: u64,
) -> Result<PathologyReport> {
    if n_reps < 100 {
        return Err(Error::Config("pathology estimate needs at least 100 repetitions".into()));
    }
    let (mu, sigma) = (1.0, 0.7);
    let threshold = mu + norm_inv_cdf(1.0 - eps)? * sigma;
    let mut naive_violations = 0usize;
    let mut robust_violations = 0usize;
    let mut rng = rng_for(master_seed, "pathology", 0);
    for _ in 0..n_reps {
        let (naive, robust) = scalar_example_solutions(mu, sigma, eps, beta, n_samples, &mut rng)?;
        if naive < threshold {
            naive_violations += 1;
        }
        if robust < threshold {
            robust_violations += 1;
        }
    }
    let n = n_reps as f64;
    let p_n = naive_violations as f64 / n;
    let p_r = robust_violations as f64 / n;
    Ok(PathologyReport {
        n_reps,
        n_samples,
        eps,
        beta,
        naive_freq: p_n,
        naive_stderr: (p_n * (1.0 - p_n) / n).sqrt(),
        robust_freq: p_r,
        robust_stderr: (p_r * (1.0 - p_r) / n).sqrt(),
        master_seed,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(dir: &Path, name: &str, content: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    out.push(path);
    Ok(())
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Write the open-loop study: a JSON summary, per-instance and trajectory
/// CSVs, and a separate timing sidecar (the only file with wall-clock data).
pub fn write_open_loop_outputs(study: &OpenLoopStudy, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    write_file(dir, "open_loop_summary.json", &json_line(study), &mut files)?;

    let mut csv = String::from(
        "method,instance,seed,feasible,objective,violation,violation_stderr\n",
    );
    for r in &study.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.method,
            r.instance,
            r.seed,
            r.feasible,
            opt_cell(r.objective),
            opt_cell(r.violation),
            opt_cell(r.violation_stderr)
        );
    }
    write_file(dir, "fig5_violations.csv", &csv, &mut files)?;

    let mut traj = String::from("method,t,coords\n");
    for (m, plan) in &study.plans {
        for (t, x) in plan.x.iter().enumerate() {
            let joined =
                x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
            let _ = writeln!(traj, "{m},{t},{joined}");
        }
    }
    write_file(dir, "fig2_trajectories.csv", &traj, &mut files)?;

    let timings = serde_json::json!({
        "note": "wall-clock measurements; excluded from reproducibility guarantees",
        "solver_time_mean_s": study
            .reports
            .iter()
            .map(|r| (r.method.to_string(), r.solver_time_mean_s))
            .collect::<BTreeMap<_, _>>(),
        "per_instance": study
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "method": r.method.to_string(),
                    "instance": r.instance,
                    "solve_time_s": r.solve_time_s,
                })
            })
            .collect::<Vec<_>>(),
    });
    write_file(
        dir,
        "open_loop_summary.timings.json",
        &json_line(&timings),
        &mut files,
    )?;
    Ok(files)
}

/// Write the sweep study: JSON summary, cost curve CSV, and timing sidecars.
pub fn write_sweep_outputs(study: &SweepStudy, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    write_file(dir, "sweep_summary.json", &json_line(study), &mut files)?;

    let mut cost = String::from("n_s,method,n_feasible,mean_cost\n");
    for level in &study.levels {
        for m in &level.methods {
            let _ = writeln!(
                cost,
                "{},{},{},{}",
                level.n_s,
                m.method,
                m.n_feasible,
                opt_cell(m.mean_cost)
            );
        }
    }
    write_file(dir, "fig6_cost_vs_ns.csv", &cost, &mut files)?;

    let mut time = String::from("n_s,method,mean_solve_time_s\n");
    for level in &study.levels {
        for m in &level.methods {
            let _ = writeln!(time, "{},{},{}", level.n_s, m.method, m.mean_solve_time_s);
        }
    }
    write_file(dir, "fig7_time_vs_ns.timings.csv", &time, &mut files)?;
    Ok(files)
}

/// Write the closed-loop study: JSON summary, per-run CSV, the
/// representative-run trajectory CSV, and the uncertainty curves.
pub fn write_closed_loop_outputs(study: &ClosedLoopStudy, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    write_file(dir, "closed_loop_summary.json", &json_line(study), &mut files)?;

    let mut runs = String::from(
        "run,seed,completed,collided,aborted_at,fallback_steps,initial_cost,closed_cost\n",
    );
    for r in &study.rows {
        let _ = writeln!(
            runs,
            "{},{},{},{},{},{},{},{}",
            r.run,
            r.seed,
            r.completed,
            r.collided,
            r.aborted_at.map(|a| a.to_string()).unwrap_or_default(),
            r.fallback_steps,
            opt_cell(r.initial_cost),
            opt_cell(r.closed_cost)
        );
    }
    write_file(dir, "closed_loop_runs.csv", &runs, &mut files)?;

    if let Some(rep) = &study.representative {
        let mut fig8 = String::from("tau,ego,input,obstacle,fallback\n");
        for s in &rep.records {
            let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
            let _ = writeln!(
                fig8,
                "{},{},{},{},{}",
                s.tau,
                join(&s.ego),
                join(&s.input),
                join(&s.obstacle_true),
                s.fallback
            );
        }
        write_file(dir, "fig8_run.csv", &fig8, &mut files)?;
    }

    let mut fig9 = String::from("step,open_loop_std,closed_pred_std\n");
    let steps = study.open_loop_std_mean.len().max(study.closed_pred_std_mean.len());
    for t in 0..steps {
        let join = |v: Option<&Vec<f64>>| {
            v.map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"))
                .unwrap_or_default()
        };
        let _ = writeln!(
            fig9,
            "{},{},{}",
            t,
            join(study.open_loop_std_mean.get(t)),
            join(study.closed_pred_std_mean.get(t))
        );
    }
    write_file(dir, "fig9_uncertainty.csv", &fig9, &mut files)?;
    Ok(files)
}

/// Write the scalar-pathology report as JSON plus a two-row CSV.
pub fn write_pathology_outputs(report: &PathologyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    write_file(dir, "pathology_summary.json", &json_line(report), &mut files)?;
    let mut csv = String::from("arm,violations_frequency,stderr,n_reps\n");
    let _ = writeln!(
        csv,
        "naive,{},{},{}",
        report.naive_freq, report.naive_stderr, report.n_reps
    );
    let _ = writeln!(
        csv,
        "robust,{},{},{}",
        report.robust_freq, report.robust_stderr, report.n_reps
    );
    write_file(dir, "fig1_pathology.csv", &csv, &mut files)?;
    Ok(files)
}
