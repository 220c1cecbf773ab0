//! Receding-horizon planning against a stochastically driven obstacle.
//!
//! Each outer step measures the obstacle, updates a Kalman belief, redraws a
//! state sample cloud from the posterior, propagates it with the shared
//! noise pools, rebuilds the face constraints, and re-solves the
//! mixed-integer plan; only the first input is applied. The planner side
//! sees nothing but samples; the true obstacle state only drives the
//! simulation and the measurements.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AllocationKind, BoxSet, CostSpec, LtvSystem, ObstacleSet, PlanningProblem,
};
use crate::planner::{assemble, solve_misocp, Method, PlanRecord, PlanSolution};
use crate::prediction::{
    kf_predict, kf_update, predicted_face_estimates, propagate_samples, FilterState, ObstacleModel,
};
use crate::stats::{
    gaussian_draw, gaussian_draw_one, raw_mean_cov, rng_for, GaussianBelief, SampleSet,
};

/// What to do when a replanning step has no feasible plan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    /// Stop the run and mark it aborted.
    #[default]
    Abort,
    /// Keep consuming the most recent feasible plan (zero input once it
    /// runs out) and flag the step.
    FallbackPrevious,
}

/// True distributions used only to simulate the world: initial obstacle
/// state, per-step process noise, and measurement noise.
#[derive(Debug, Clone)]
pub struct TruthModel {
    pub init: GaussianBelief,
    pub process_noise: GaussianBelief,
    pub measurement_noise: GaussianBelief,
}

/// A complete closed-loop scenario: ego problem skeleton plus one obstacle.
#[derive(Debug, Clone)]
pub struct CcrhSpec {
    /// Ego dynamics; the horizon doubles as the number of outer steps.
    pub ego: LtvSystem,
    pub cost: CostSpec,
    pub state_box: Option<BoxSet>,
    pub eps_total: f64,
    pub beta: f64,
    /// Fixed big-M, or None to certify one per replanning step over the
    /// state box (which must then be present and bounded).
    pub big_m: Option<f64>,
    pub method: Method,
    pub obstacle: ObstacleModel,
    pub truth: TruthModel,
    pub policy: InfeasiblePolicy,
}

/// One outer step of a run. Wall-clock timing deliberately absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcrhStepRecord {
    pub tau: usize,
    pub ego: Vec<f64>,
    pub input: Vec<f64>,
    /// Plan cost when this step solved to optimality; None on fallback.
    pub objective: Option<f64>,
    pub fallback: bool,
    pub nodes_explored: usize,
    pub relaxations_solved: usize,
    pub obstacle_true: Vec<f64>,
    pub measurement: Option<Vec<f64>>,
    pub filter_mean: Vec<f64>,
    /// Per-coordinate standard deviation of the filter posterior.
    pub filter_std: Vec<f64>,
    /// Per-coordinate standard deviation of the one-step-ahead obstacle
    /// sample cloud used for this step's plan.
    pub pred_std: Vec<f64>,
    /// The full plan solved at this step; None on fallback.
    pub plan: Option<PlanRecord>,
}

/// Result of one closed-loop run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcrhRun {
    pub method: Method,
    pub seed: u64,
    /// One record per completed outer step (exactly the horizon when the
    /// run was not aborted).
    pub records: Vec<CcrhStepRecord>,
    pub ego_traj: Vec<Vec<f64>>,
    pub obstacle_traj: Vec<Vec<f64>>,
    /// Per-coordinate sample std of the obstacle cloud propagated from
    /// tau = 0 over the whole horizon, with no measurements folded in.
    pub open_loop_std: Vec<Vec<f64>>,
    /// Objective of the tau = 0 plan; None when that step had no plan.
    pub initial_open_loop_cost: Option<f64>,
    /// The cost function evaluated on the realized trajectory and the
    /// actually applied inputs; None for aborted runs.
    pub closed_loop_cost: Option<f64>,
    pub collided: bool,
    pub completed: bool,
    pub aborted_at: Option<usize>,
}

fn per_coord_std(set: &SampleSet) -> Vec<f64> {
    let (_, cov) = raw_mean_cov(set);
    (0..cov.nrows()).map(|k| cov[(k, k)].max(0.0).sqrt()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Run the closed-loop scheme for exactly `spec.ego.horizon()` outer steps
/// (fewer only when an infeasible step aborts under [`InfeasiblePolicy::Abort`]).
pub fn run_ccrh(spec: &CcrhSpec, seed: u64) -> Result<CcrhRun> {
    spec.obstacle.validate()?;
    let n = spec.ego.horizon();
    if n == 0 {
        return Err(Error::Config("closed-loop run needs a positive horizon".into()));
    }
    let needed = 2 * n - 1;
    if spec.obstacle.noise_samples.len() < needed {
        return Err(Error::Config(format!(
            "noise pools cover {} steps, receding horizon needs {needed}",
            spec.obstacle.noise_samples.len()
        )));
    }
    let n_s = spec.obstacle.n_samples();
    let model = &spec.obstacle;

    let mut truth_process = rng_for(seed, "truth-process", 0);
    let mut truth_measure = rng_for(seed, "truth-measure", 0);
    let mut chi_true = gaussian_draw_one(&spec.truth.init, &mut rng_for(seed, "truth-init", 0));

    let mut ego_state = spec.ego.initial_state().clone();
    let mut filter = FilterState::from_samples(&model.init_samples)?;
    let mut cloud = model.init_samples.clone();

    let mut run = CcrhRun {
        method: spec.method,
        seed,
        records: Vec::with_capacity(n),
        ego_traj: vec![vec_of(&ego_state)],
        obstacle_traj: vec![vec_of(&chi_true)],
        open_loop_std: Vec::new(),
        initial_open_loop_cost: None,
        closed_loop_cost: None,
        collided: false,
        completed: true,
        aborted_at: None,
    };
    // Most recent feasible plan and the index of its next unused input.
    let mut stashed: Option<(PlanSolution, usize)> = None;

    for tau in 0..n {
        let mut measurement = None;
        if tau >= 1 {
            let v = gaussian_draw_one(&spec.truth.measurement_noise, &mut truth_measure);
            let y = &model.h_mat * &chi_true + v;
            let predicted = kf_predict(
                &filter,
                &model.e_mat,
                &model.f_vec,
                &model.process_noise_cov(tau - 1)?,
            )?;
            filter = kf_update(&predicted, &model.h_mat, &model.sigma_v, &y)?;
            let posterior = GaussianBelief::new(filter.mean.clone(), filter.cov.clone())?;
            cloud = gaussian_draw(&posterior, n_s, &mut rng_for(seed, "posterior-redraw", tau as u64));
            measurement = Some(vec_of(&y));
        }

        let noise_refs: Vec<&SampleSet> = model.noise_samples[tau..tau + n].iter().collect();
        let clouds = propagate_samples(&cloud, &model.e_mat, &model.f_vec, &noise_refs)?;
        if tau == 0 {
            run.open_loop_std = clouds.iter().map(per_coord_std).collect();
        }
        let pred_std = per_coord_std(&clouds[0]);

        let groups = predicted_face_estimates(&clouds, &model.shape, 0, 1)?;
        let mut problem = PlanningProblem::new(
            spec.ego.with_initial_state(ego_state.clone())?,
            ObstacleSet::new(groups)?,
            spec.eps_total,
            spec.beta,
            spec.big_m.unwrap_or(1.0),
            spec.cost.clone(),
            spec.state_box.clone(),
            AllocationKind::Improved,
        )?;
        if spec.big_m.is_none() {
            let sb = spec.state_box.as_ref().ok_or_else(|| {
                Error::Config("certifying big-M per step needs a bounded state box".into())
            })?;
            problem.big_m = crate::model::big_m_value(&problem, sb)?;
        }
        let template = assemble(spec.method, &problem)?;
        let solved = match solve_misocp(&template) {
            Ok(sol) => Ok(sol),
            // A node-limited search still yields its best incumbent.
            Err(Error::NodeLimit { best: Some(best), .. }) => Ok(*best),
            Err(Error::NodeLimit { best: None, .. }) => {
                Err(Error::Infeasible("node budget exhausted with no incumbent".into()))
            }
            Err(e) => Err(e),
        };

        let (input, objective, fallback, nodes, relaxations, plan_record) = match solved {
            Ok(sol) => {
                let u = sol.u_seq[0].clone();
                let nodes = sol.stats.nodes_explored;
                let relaxations = sol.stats.relaxations_solved;
                let record = sol.to_record();
                let obj = Some(sol.objective);
                stashed = Some((sol, 1));
                (u, obj, false, nodes, relaxations, Some(record))
            }
            Err(Error::Infeasible(_)) => match spec.policy {
                InfeasiblePolicy::Abort => {
                    run.completed = false;
                    run.aborted_at = Some(tau);
                    return Ok(run);
                }
                InfeasiblePolicy::FallbackPrevious => {
                    let u = match &mut stashed {
                        Some((plan, next)) if *next < plan.u_seq.len() => {
                            let u = plan.u_seq[*next].clone();
                            *next += 1;
                            u
                        }
                        _ => DVector::zeros(spec.ego.input_dim()),
                    };
                    (u, None, true, 0, 0, None)
                }
            },
            Err(e) => return Err(e),
        };
        if tau == 0 {
            run.initial_open_loop_cost = objective;
        }

        run.records.push(CcrhStepRecord {
            tau,
            ego: vec_of(&ego_state),
            input: vec_of(&input),
            objective,
            fallback,
            nodes_explored: nodes,
            relaxations_solved: relaxations,
            obstacle_true: vec_of(&chi_true),
            measurement,
            filter_mean: vec_of(&filter.mean),
            filter_std: (0..filter.dim())
                .map(|k| filter.cov[(k, k)].max(0.0).sqrt())
                .collect(),
            pred_std,
            plan: plan_record,
        });

        // Advance the world one step.
        ego_state = spec.ego.a(0) * &ego_state + spec.ego.b(0) * &input;
        let w = gaussian_draw_one(&spec.truth.process_noise, &mut truth_process);
        chi_true = &model.e_mat * &chi_true + &model.f_vec + w;
        run.ego_traj.push(vec_of(&ego_state));
        run.obstacle_traj.push(vec_of(&chi_true));
        let x_tilde = PlanningProblem::homogeneous(&ego_state);
        if model.shape.contains(&chi_true, &x_tilde) {
            run.collided = true;
        }
    }
    let traj: Vec<DVector<f64>> = run
        .ego_traj
        .iter()
        .map(|x| DVector::from_row_slice(x))
        .collect();
    let inputs: Vec<DVector<f64>> = run
        .records
        .iter()
        .map(|r| DVector::from_row_slice(&r.input))
        .collect();
    run.closed_loop_cost = Some(spec.cost.evaluate(&traj, &inputs));
    Ok(run)
}

/// Aggregate safety over a batch of runs. Aborted (infeasible) runs are
/// counted separately and excluded from the collision denominator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafetyEstimate {
    pub n_runs: usize,
    pub n_completed: usize,
    pub n_aborted: usize,
    pub n_safe: usize,
    /// Fraction of completed runs with no collision.
    pub safety_rate: f64,
    /// Binomial standard error of `safety_rate`.
    pub std_err: f64,
}

/// Requires at least 500 runs for the binomial error to be meaningful.
pub fn ccrh_safety_estimate(runs: &[CcrhRun]) -> Result<SafetyEstimate> {
    if runs.len() < 500 {
        return Err(Error::Config(format!(
            "safety estimation needs at least 500 runs, got {}",
            runs.len()
        )));
    }
    let n_runs = runs.len();
    let n_completed = runs.iter().filter(|r| r.completed).count();
    let n_aborted = n_runs - n_completed;
    let n_safe = runs.iter().filter(|r| r.completed && !r.collided).count();
    if n_completed == 0 {
        return Err(Error::Config("no completed runs to estimate safety from".into()));
    }
    let p = n_safe as f64 / n_completed as f64;
    Ok(SafetyEstimate {
        n_runs,
        n_completed,
        n_aborted,
        n_safe,
        safety_rate: p,
        std_err: (p * (1.0 - p) / n_completed as f64).sqrt(),
    })
}
