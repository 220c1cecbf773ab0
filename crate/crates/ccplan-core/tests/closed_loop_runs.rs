//! End-to-end behavior of the receding-horizon driver: degenerate-noise
//! reproduction of the first plan, bookkeeping replay, infeasibility
//! policies, and the per-step risk promise checked by Monte Carlo.

mod common;

use ccplan_core::closed_loop::{run_ccrh, CcrhSpec, InfeasiblePolicy, TruthModel};
use ccplan_core::model::{BoxSet, CostSpec, InputSet, LtvSystem};
use ccplan_core::planner::Method;
use ccplan_core::prediction::{ObstacleModel, ShapeTemplate};
use ccplan_core::stats::{gaussian_draw, gaussian_draw_one, rng_for, GaussianBelief, SampleSet};
use common::mc_stderr;
use nalgebra::{DMatrix, DVector};

fn double_integrator(n: usize, x0: &[f64], input_half: &[f64]) -> LtvSystem {
    let dt = 0.2;
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, dt, 0.0, //
            0.0, 1.0, 0.0, dt, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    );
    let b = DMatrix::from_row_slice(
        4,
        2,
        &[
            dt * dt / 2.0, 0.0, //
            0.0, dt * dt / 2.0, //
            dt, 0.0, //
            0.0, dt,
        ],
    );
    LtvSystem::time_invariant(
        a,
        b,
        n,
        DVector::from_row_slice(x0),
        InputSet::symmetric_box(input_half),
    )
    .unwrap()
}

fn lane_cost() -> CostSpec {
    CostSpec::StageTracking {
        output: DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        target: DVector::from_row_slice(&[2.0, 10.0]),
        input_weight: 0.1,
    }
}

fn lane_box() -> BoxSet {
    BoxSet::new(
        DVector::from_row_slice(&[-20.0, -4.0, -30.0, -8.0]),
        DVector::from_row_slice(&[60.0, 4.0, 30.0, 8.0]),
    )
    .unwrap()
}

/// Obstacle model plus matching truth, with sample pools drawn from the
/// truth distributions under a dedicated seed stream.
fn obstacle_with_truth(
    n: usize,
    n_s: usize,
    init: GaussianBelief,
    process: GaussianBelief,
    pool_seed: u64,
) -> (ObstacleModel, TruthModel) {
    let dt = 0.2;
    let e_mat = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, dt, 0.0, //
            0.0, 1.0, 0.0, dt, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.97,
        ],
    );
    let mut pool_rng = rng_for(pool_seed, "pool", 0);
    let init_samples = gaussian_draw(&init, n_s, &mut pool_rng);
    let noise_samples: Vec<SampleSet> = (0..2 * n)
        .map(|_| gaussian_draw(&process, n_s, &mut pool_rng))
        .collect();
    let model = ObstacleModel {
        e_mat,
        f_vec: DVector::zeros(4),
        h_mat: DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        sigma_v: DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 0.04])),
        shape: ShapeTemplate::axis_aligned_car(8.0, 4.0, 4, 4).unwrap(),
        init_samples,
        noise_samples,
    };
    let truth = TruthModel {
        init,
        process_noise: process,
        measurement_noise: GaussianBelief::new(
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 0.04])),
        )
        .unwrap(),
    };
    (model, truth)
}

/// Slower obstacle ahead in the ego's own lane, with genuine noise: the
/// first plan must brake behind conservative margins and re-solves win
/// cost back as the filter sharpens the speed estimate.
fn noisy_spec(n: usize, n_s: usize, method: Method) -> CcrhSpec {
    let init = GaussianBelief::new(
        DVector::from_row_slice(&[10.0, 2.0, 6.0, 0.0]),
        DMatrix::from_diagonal(&DVector::from_row_slice(&[0.25, 0.04, 0.5, 0.05])),
    )
    .unwrap();
    let process = GaussianBelief::new(
        DVector::zeros(4),
        DMatrix::from_diagonal(&DVector::from_row_slice(&[0.001, 0.001, 0.04, 0.001])),
    )
    .unwrap();
    let (obstacle, truth) = obstacle_with_truth(n, n_s, init, process, 8_101);
    CcrhSpec {
        ego: double_integrator(n, &[0.0, 2.0, 10.0, 0.0], &[10.0, 2.0]),
        cost: lane_cost(),
        state_box: Some(lane_box()),
        eps_total: 0.05,
        beta: 1e-3,
        big_m: None,
        method,
        obstacle,
        truth,
        policy: InfeasiblePolicy::Abort,
    }
}

/// Fully deterministic world: no noise anywhere, obstacle far away.
fn silent_spec(n: usize) -> CcrhSpec {
    let init = GaussianBelief::new(
        DVector::from_row_slice(&[200.0, -2.0, 8.0, 0.0]),
        DMatrix::zeros(4, 4),
    )
    .unwrap();
    let process = GaussianBelief::new(DVector::zeros(4), DMatrix::zeros(4, 4)).unwrap();
    let (mut obstacle, mut truth) = obstacle_with_truth(n, 40, init, process, 8_102);
    obstacle.sigma_v = DMatrix::identity(2, 2) * 1e-6;
    truth.measurement_noise =
        GaussianBelief::new(DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
    CcrhSpec {
        // Start on the tracking target manifold: every re-solve derives
        // the same do-nothing plan, so the walk must be exact.
        ego: double_integrator(n, &[0.0, 2.0, 10.0, 0.0], &[10.0, 2.0]),
        cost: lane_cost(),
        state_box: Some(lane_box()),
        eps_total: 0.05,
        beta: 1e-3,
        big_m: None,
        method: Method::Mra,
        obstacle,
        truth,
        policy: InfeasiblePolicy::Abort,
    }
}

#[test]
fn deterministic_world_replays_the_first_plan_verbatim() {
    let n = 6;
    let spec = silent_spec(n);
    let run = run_ccrh(&spec, 400).unwrap();
    assert!(run.completed && !run.collided);
    assert_eq!(run.records.len(), n);

    // With nothing changing between re-solves, the closed loop walks the
    // tau = 0 plan and pays exactly its cost.
    let plan0 = run.records[0].plan.as_ref().expect("first step solved");
    for (t, x) in run.ego_traj.iter().enumerate() {
        for k in 0..4 {
            // The objective bottom is flat, so each solve carries noise at
            // the absolute-gap scale; 1e-4 absorbs it across the horizon.
            assert!(
                (x[k] - plan0.x[t][k]).abs() < 1e-4,
                "state {k} at step {t}: closed {} vs planned {}",
                x[k],
                plan0.x[t][k]
            );
        }
    }
    let initial = run.initial_open_loop_cost.unwrap();
    let closed = run.closed_loop_cost.unwrap();
    assert!(initial.abs() <= 1e-6, "do-nothing plan should cost ~0, got {initial}");
    assert!(
        (closed - initial).abs() <= 1e-6,
        "closed {closed} vs initial {initial}"
    );
    // Every step re-solved (no fallbacks) and stayed on the target manifold.
    for rec in &run.records {
        assert!(!rec.fallback && rec.objective.is_some());
        assert!((rec.ego[1] - 2.0).abs() < 1e-4 && (rec.ego[2] - 10.0).abs() < 1e-4);
    }
}

#[test]
fn records_replay_through_the_dynamics() {
    let spec = noisy_spec(4, 80, Method::Mra);
    let run = run_ccrh(&spec, 401).unwrap();
    assert!(run.completed);
    let (a, b) = (spec.ego.a(0).clone(), spec.ego.b(0).clone());
    for (tau, rec) in run.records.iter().enumerate() {
        assert_eq!(rec.tau, tau);
        assert_eq!(rec.ego, run.ego_traj[tau]);
        // Applied input is the head of this step's plan.
        if let Some(plan) = &rec.plan {
            assert_eq!(rec.input, plan.u[0]);
            assert_eq!(rec.ego, plan.x[0]);
        }
        let x = DVector::from_row_slice(&rec.ego);
        let u = DVector::from_row_slice(&rec.input);
        let next = &a * x + &b * u;
        for k in 0..4 {
            assert!((next[k] - run.ego_traj[tau + 1][k]).abs() < 1e-12);
        }
    }
}

#[test]
fn first_step_violation_stays_under_the_stage_budget() {
    let n = 4;
    let spec = noisy_spec(n, 120, Method::Mra);
    let run = run_ccrh(&spec, 402).unwrap();
    let plan0 = run.records[0].plan.as_ref().expect("first step solved");

    // The planned first state must avoid the realized obstacle with
    // probability 1 - eps/N under the true distributions.
    let x1 = DVector::from_row_slice(&plan0.x[1]);
    let x_tilde = {
        let mut h = DVector::zeros(5);
        h.rows_mut(0, 4).copy_from(&x1);
        h[4] = 1.0;
        h
    };
    let n_mc = 20_000;
    let mut rng = rng_for(402, "stage-mc", 0);
    let mut hits = 0usize;
    for _ in 0..n_mc {
        let chi0 = gaussian_draw_one(&spec.truth.init, &mut rng);
        let w0 = gaussian_draw_one(&spec.truth.process_noise, &mut rng);
        let chi1 = &spec.obstacle.e_mat * chi0 + &spec.obstacle.f_vec + w0;
        if spec.obstacle.shape.contains(&chi1, &x_tilde) {
            hits += 1;
        }
    }
    let p_hat = hits as f64 / n_mc as f64;
    let budget = spec.eps_total / n as f64;
    let ceiling = budget + 3.0 * mc_stderr(budget, n_mc);
    assert!(
        p_hat <= ceiling,
        "first-step violation {p_hat:.5} exceeds stage budget {ceiling:.5}"
    );
}

/// Obstacle parked exactly on a motionless ego: no face can ever be
/// satisfied, so every replanning step is infeasible.
fn hopeless_spec(policy: InfeasiblePolicy) -> CcrhSpec {
    let init = GaussianBelief::new(
        DVector::from_row_slice(&[0.0, 2.0, 0.0, 0.0]),
        DMatrix::zeros(4, 4),
    )
    .unwrap();
    let process = GaussianBelief::new(DVector::zeros(4), DMatrix::zeros(4, 4)).unwrap();
    let (mut obstacle, mut truth) = obstacle_with_truth(3, 40, init, process, 8_103);
    obstacle.e_mat = DMatrix::identity(4, 4);
    obstacle.sigma_v = DMatrix::identity(2, 2) * 1e-6;
    truth.measurement_noise =
        GaussianBelief::new(DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
    CcrhSpec {
        // Zero input authority: the ego cannot move off the obstacle.
        ego: double_integrator(3, &[0.0, 2.0, 0.0, 0.0], &[0.0, 0.0]),
        cost: lane_cost(),
        state_box: Some(lane_box()),
        eps_total: 0.05,
        beta: 1e-3,
        big_m: None,
        method: Method::Mra,
        obstacle,
        truth,
        policy,
    }
}

#[test]
fn abort_policy_stops_at_the_first_infeasible_step() {
    let run = run_ccrh(&hopeless_spec(InfeasiblePolicy::Abort), 403).unwrap();
    assert!(!run.completed);
    assert_eq!(run.aborted_at, Some(0));
    assert!(run.records.is_empty());
    assert!(run.closed_loop_cost.is_none());
    assert!(run.initial_open_loop_cost.is_none());
}

#[test]
fn fallback_policy_coasts_and_reports_the_collision() {
    let run = run_ccrh(&hopeless_spec(InfeasiblePolicy::FallbackPrevious), 403).unwrap();
    assert!(run.completed);
    assert_eq!(run.records.len(), 3);
    for rec in &run.records {
        assert!(rec.fallback);
        assert!(rec.objective.is_none());
        assert!(rec.plan.is_none());
        // No stashed plan exists, so the fallback input is zero.
        assert!(rec.input.iter().all(|&v| v == 0.0));
    }
    // Sitting inside the obstacle is recorded as a collision.
    assert!(run.collided);
    assert!(run.closed_loop_cost.is_some());
}

#[test]
fn short_noise_pools_are_rejected() {
    let mut spec = noisy_spec(4, 60, Method::Mra);
    spec.obstacle.noise_samples.truncate(2 * 4 - 2);
    let err = run_ccrh(&spec, 404).unwrap_err();
    assert!(matches!(err, ccplan_core::error::Error::Config(_)));
}

#[test]
fn replanning_beats_the_initial_plan_on_the_duel_scenario() {
    let cfg = ccplan_core::scenario::bundled("closed_loop_s52").unwrap();
    let mut improved = 0usize;
    let mut compared = 0usize;
    let mut pairs = Vec::new();
    for seed in 0..3u64 {
        let spec = ccplan_core::scenario::closed_loop_spec(&cfg, Method::Mra, 900 + seed).unwrap();
        let run = run_ccrh(&spec, 900 + seed).unwrap();
        if !run.completed {
            continue;
        }
        assert!(!run.collided, "seed {seed} collided");
        let (Some(initial), Some(closed)) =
            (run.initial_open_loop_cost, run.closed_loop_cost)
        else {
            continue;
        };
        // The drifting adversary forces a real maneuver.
        assert!(initial > 1.0, "seed {seed}: initial cost {initial} is trivial");
        compared += 1;
        if closed < initial {
            improved += 1;
        }
        pairs.push((initial, closed));
    }
    assert!(compared >= 2, "only {compared} runs produced both costs");
    assert!(
        2 * improved >= compared,
        "replanning improved only {improved} of {compared} runs: {pairs:?}"
    );
}
