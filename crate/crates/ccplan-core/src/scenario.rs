//! Declarative scenario configuration: JSON schema, validation, and
//! translation into runnable planning problems and closed-loop specs.
//!
//! Two benchmark scenarios ship built in: a planar corridor reach task with
//! static uncertain walls (`open_loop_s51`) and a highway duel against a
//! lane-changing car (`closed_loop_s52`). Every field that shapes results
//! lives in the config so a digest of the config pins the whole experiment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::closed_loop::{CcrhSpec, InfeasiblePolicy, TruthModel};
use crate::error::{Error, Result};
use crate::model::{
    big_m_value, AllocationKind, BoxSet, CostSpec, FaceGroup, InputSet, LtvSystem, ObstacleSet,
    PlanningProblem, UncertainFace,
};
use crate::prediction::{dlqr_gain, ObstacleModel, ShapeTemplate};
use crate::stats::{gaussian_draw, rng_for, GaussianBelief, SampleSet};

/// Root configuration document. Unknown keys anywhere are rejected so typos
/// cannot silently change an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    pub system: SystemConfig,
    pub obstacles: ObstaclesConfig,
    pub risk: RiskConfig,
    pub solver: SolverConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    OpenLoop,
    ClosedLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub template: SystemTemplate,
    pub horizon: usize,
    pub initial_state: Vec<f64>,
    /// Symmetric input box half-widths, one per input.
    pub input_half_widths: Vec<f64>,
    #[serde(default)]
    pub state_lower: Option<Vec<f64>>,
    #[serde(default)]
    pub state_upper: Option<Vec<f64>>,
    pub cost: CostConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemTemplate {
    /// Position-controlled point in the plane: x+ = x + u.
    SingleIntegrator2d,
    /// Planar double integrator, state (px, py, vx, vy), acceleration input.
    DoubleIntegrator2d { dt: f64 },
}

impl SystemTemplate {
    pub fn state_dim(&self) -> usize {
        match self {
            SystemTemplate::SingleIntegrator2d => 2,
            SystemTemplate::DoubleIntegrator2d { .. } => 4,
        }
    }

    pub fn input_dim(&self) -> usize {
        2
    }

    pub fn matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        match self {
            SystemTemplate::SingleIntegrator2d => {
                (DMatrix::identity(2, 2), DMatrix::identity(2, 2))
            }
            SystemTemplate::DoubleIntegrator2d { dt } => {
                let a = DMatrix::from_row_slice(
                    4,
                    4,
                    &[
                        1.0, 0.0, *dt, 0.0, //
                        0.0, 1.0, 0.0, *dt, //
                        0.0, 0.0, 1.0, 0.0, //
                        0.0, 0.0, 0.0, 1.0,
                    ],
                );
                let h = dt * dt / 2.0;
                let b = DMatrix::from_row_slice(
                    4,
                    2,
                    &[
                        h, 0.0, //
                        0.0, h, //
                        *dt, 0.0, //
                        0.0, *dt,
                    ],
                );
                (a, b)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    /// ||x_N - target||^2.
    Terminal { target: Vec<f64> },
    /// Track selected state coordinates each step plus an input penalty.
    Stage {
        output_coords: Vec<usize>,
        target: Vec<f64>,
        input_weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstaclesConfig {
    /// One static disjunction: the state must satisfy at least one uncertain
    /// half-space a' x + b >= 0 whose coefficients are jointly Gaussian.
    StaticWalls {
        faces: Vec<WallFace>,
        /// Isotropic coefficient variance (covariance = variance x I).
        coeff_variance: f64,
        n_samples: usize,
    },
    /// A rectangular car under affine dynamics with a lateral feedback
    /// controller pulling it toward `lateral_target`.
    AdversaryCar {
        init_mean: Vec<f64>,
        init_var_diag: Vec<f64>,
        process_var_diag: Vec<f64>,
        meas_var_diag: Vec<f64>,
        lateral_target: f64,
        /// Physical car footprint. Collision checking treats the ego as a
        /// point, so the avoid region is inflated by the ego footprint.
        car_length: f64,
        car_width: f64,
        ego_length: f64,
        ego_width: f64,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallFace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub eps_total: f64,
    pub beta: f64,
    pub allocation: AllocationKind,
    #[serde(default)]
    pub redistribute: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Fixed big-M; absent means certify one from the state box.
    pub big_m: Option<f64>,
    pub node_limit: Option<usize>,
    /// Closed loop only: how a replanning step without a feasible plan is
    /// handled.
    pub on_infeasible: InfeasiblePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Monte Carlo draws per violation estimate.
    pub n_mc: usize,
    /// Independent sampled instances (open-loop studies).
    pub n_instances: usize,
    /// Closed-loop runs.
    pub n_runs: usize,
    pub master_seed: u64,
    /// Sample-count grid for sweep studies; None = the built-in grid.
    pub sweep_sample_counts: Option<Vec<usize>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_mc: 10_000,
            n_instances: 20,
            n_runs: 50,
            master_seed: 20_260_822,
            sweep_sample_counts: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse failed: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let n_x = self.system.template.state_dim();
        let n_u = self.system.template.input_dim();
        if self.system.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.system.initial_state.len() != n_x {
            return Err(Error::Config(format!(
                "initial state has {} entries, template needs {n_x}",
                self.system.initial_state.len()
            )));
        }
        if self.system.input_half_widths.len() != n_u {
            return Err(Error::Config("input half-widths length mismatch".into()));
        }
        if self.system.input_half_widths.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("input half-widths must be positive".into()));
        }
        for (name, b) in [
            ("state_lower", &self.system.state_lower),
            ("state_upper", &self.system.state_upper),
        ] {
            if let Some(v) = b {
                if v.len() != n_x {
                    return Err(Error::Config(format!("{name} length mismatch")));
                }
            }
        }
        match &self.system.cost {
            CostConfig::Terminal { target } => {
                if target.len() != n_x {
                    return Err(Error::Config("terminal cost target length mismatch".into()));
                }
            }
            CostConfig::Stage {
                output_coords,
                target,
                input_weight,
            } => {
                if output_coords.iter().any(|&c| c >= n_x) {
                    return Err(Error::Config("stage cost coordinate out of range".into()));
                }
                if output_coords.len() != target.len() {
                    return Err(Error::Config("stage cost target length mismatch".into()));
                }
                if !(*input_weight >= 0.0) {
                    return Err(Error::Config("input weight must be nonnegative".into()));
                }
            }
        }
        if !(self.risk.eps_total > 0.0 && self.risk.eps_total < 1.0) {
            return Err(Error::Config("eps_total must lie in (0, 1)".into()));
        }
        if !(self.risk.beta > 0.0 && self.risk.beta < 1.0) {
            return Err(Error::Config("beta must lie in (0, 1)".into()));
        }
        match (&self.kind, &self.obstacles) {
            (ScenarioKind::OpenLoop, ObstaclesConfig::StaticWalls { faces, coeff_variance, n_samples }) => {
                // An empty face list is legal: an obstacle-free instance.
                for f in faces {
                    if f.normal.len() != n_x {
                        return Err(Error::Config("wall normal length mismatch".into()));
                    }
                }
                if !(*coeff_variance >= 0.0) {
                    return Err(Error::Config("coefficient variance must be nonnegative".into()));
                }
                if *n_samples < 2 {
                    return Err(Error::Config("need at least 2 coefficient samples".into()));
                }
            }
            (ScenarioKind::ClosedLoop, ObstaclesConfig::AdversaryCar { init_mean, init_var_diag, process_var_diag, meas_var_diag, car_length, car_width, ego_length, ego_width, n_samples, .. }) => {
                if n_x != 4 {
                    return Err(Error::Config("the car scenario needs the planar double integrator".into()));
                }
                if init_mean.len() != 4 || init_var_diag.len() != 4 || process_var_diag.len() != 4 {
                    return Err(Error::Config("adversary state vectors must have 4 entries".into()));
                }
                if meas_var_diag.len() != 2 {
                    return Err(Error::Config("adversary measurement variance needs 2 entries".into()));
                }
                if init_var_diag.iter().chain(process_var_diag).chain(meas_var_diag).any(|&v| !(v >= 0.0)) {
                    return Err(Error::Config("variances must be nonnegative".into()));
                }
                if !(*car_length > 0.0 && *car_width > 0.0 && *ego_length > 0.0 && *ego_width > 0.0)
                {
                    return Err(Error::Config("car footprints must be positive".into()));
                }
                if *n_samples < 2 {
                    return Err(Error::Config("need at least 2 obstacle samples".into()));
                }
            }
            _ => {
                return Err(Error::Config(
                    "scenario kind and obstacle mode do not match".into(),
                ))
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of the canonical (compact) JSON form.
pub fn config_digest(cfg: &ScenarioConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Built-in scenario names, in presentation order.
pub fn bundled_names() -> [&'static str; 2] {
    ["open_loop_s51", "closed_loop_s52"]
}

/// Look up a built-in scenario by name.
pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    match name {
        "open_loop_s51" => Some(open_loop_s51()),
        "closed_loop_s52" => Some(closed_loop_s52()),
        _ => None,
    }
}

/// Corridor reach task: planar point robot, one disjunction of two uncertain
/// walls, terminal target in the far corner.
pub fn open_loop_s51() -> ScenarioConfig {
    ScenarioConfig {
        name: "open_loop_s51".into(),
        kind: ScenarioKind::OpenLoop,
        system: SystemConfig {
            template: SystemTemplate::SingleIntegrator2d,
            horizon: 10,
            initial_state: vec![1.0, 1.0],
            input_half_widths: vec![1.0, 1.0],
            state_lower: Some(vec![0.0, 0.0]),
            state_upper: Some(vec![9.0, 9.0]),
            cost: CostConfig::Terminal {
                target: vec![8.0, 7.0],
            },
        },
        obstacles: ObstaclesConfig::StaticWalls {
            faces: vec![
                WallFace {
                    normal: vec![-1.0, 0.0],
                    offset: 2.0,
                },
                WallFace {
                    normal: vec![0.0, 1.0],
                    offset: -6.0,
                },
            ],
            coeff_variance: 0.001,
            n_samples: 1259,
        },
        risk: RiskConfig {
            eps_total: 0.05,
            beta: 1e-3,
            allocation: AllocationKind::Improved,
            redistribute: true,
        },
        solver: SolverConfig::default(),
        eval: EvalConfig {
            n_mc: 10_000,
            n_instances: 20,
            n_runs: 0,
            master_seed: 20_260_822,
            sweep_sample_counts: None,
        },
    }
}

/// Highway duel: the ego tracks lane y = 2 at speed while a car in the other
/// lane drifts over under lateral feedback.
pub fn closed_loop_s52() -> ScenarioConfig {
    ScenarioConfig {
        name: "closed_loop_s52".into(),
        kind: ScenarioKind::ClosedLoop,
        system: SystemConfig {
            template: SystemTemplate::DoubleIntegrator2d { dt: 0.2 },
            horizon: 25,
            initial_state: vec![0.0, 2.0, 19.44, 0.0],
            input_half_widths: vec![10.0, 2.0],
            state_lower: Some(vec![-20.0, -3.0, 0.0, -8.0]),
            state_upper: Some(vec![150.0, 3.0, 30.0, 8.0]),
            cost: CostConfig::Stage {
                output_coords: vec![1, 2],
                target: vec![2.0, 19.44],
                input_weight: 0.1,
            },
        },
        obstacles: ObstaclesConfig::AdversaryCar {
            init_mean: vec![0.0, -2.0, 19.44, 0.0],
            init_var_diag: vec![0.0, 0.0, 1.23, 0.08],
            process_var_diag: vec![0.0, 0.0, 0.04, 0.001],
            meas_var_diag: vec![1.0, 0.04],
            lateral_target: 2.0,
            car_length: 4.0,
            car_width: 2.0,
            ego_length: 4.0,
            ego_width: 2.0,
            n_samples: 1000,
        },
        risk: RiskConfig {
            eps_total: 0.05,
            beta: 1e-3,
            allocation: AllocationKind::Improved,
            redistribute: false,
        },
        solver: SolverConfig::default(),
        eval: EvalConfig {
            n_mc: 0,
            n_instances: 0,
            n_runs: 50,
            master_seed: 20_260_822,
            sweep_sample_counts: None,
        },
    }
}

fn ego_system(cfg: &ScenarioConfig) -> Result<LtvSystem> {
    let (a, b) = cfg.system.template.matrices();
    LtvSystem::time_invariant(
        a,
        b,
        cfg.system.horizon,
        DVector::from_row_slice(&cfg.system.initial_state),
        InputSet::symmetric_box(&cfg.system.input_half_widths),
    )
}

fn cost_spec(cfg: &ScenarioConfig) -> CostSpec {
    let n_x = cfg.system.template.state_dim();
    match &cfg.system.cost {
        CostConfig::Terminal { target } => CostSpec::TerminalTracking {
            target: DVector::from_row_slice(target),
        },
        CostConfig::Stage {
            output_coords,
            target,
            input_weight,
        } => {
            let mut output = DMatrix::zeros(output_coords.len(), n_x);
            for (r, &c) in output_coords.iter().enumerate() {
                output[(r, c)] = 1.0;
            }
            CostSpec::StageTracking {
                output,
                target: DVector::from_row_slice(target),
                input_weight: *input_weight,
            }
        }
    }
}

fn state_box(cfg: &ScenarioConfig) -> Result<Option<BoxSet>> {
    let n_x = cfg.system.template.state_dim();
    match (&cfg.system.state_lower, &cfg.system.state_upper) {
        (None, None) => Ok(None),
        (lo, hi) => {
            let lower = lo
                .clone()
                .unwrap_or_else(|| vec![f64::NEG_INFINITY; n_x]);
            let upper = hi.clone().unwrap_or_else(|| vec![f64::INFINITY; n_x]);
            Ok(Some(BoxSet::new(
                DVector::from_row_slice(&lower),
                DVector::from_row_slice(&upper),
            )?))
        }
    }
}

/// True wall-face distributions of a static-walls scenario, in face order.
pub fn wall_beliefs(cfg: &ScenarioConfig) -> Result<Vec<GaussianBelief>> {
    let ObstaclesConfig::StaticWalls {
        faces,
        coeff_variance,
        ..
    } = &cfg.obstacles
    else {
        return Err(Error::Config("scenario has no static walls".into()));
    };
    let n_x = cfg.system.template.state_dim();
    faces
        .iter()
        .map(|f| {
            let mut mean = DVector::zeros(n_x + 1);
            for (k, &v) in f.normal.iter().enumerate() {
                mean[k] = v;
            }
            mean[n_x] = f.offset;
            GaussianBelief::new(mean, DMatrix::identity(n_x + 1, n_x + 1) * *coeff_variance)
        })
        .collect()
}

fn finish_open_loop(cfg: &ScenarioConfig, faces_per_t: Vec<Vec<UncertainFace>>) -> Result<PlanningProblem> {
    let system = ego_system(cfg)?;
    let horizon = system.horizon();
    let mut groups = Vec::with_capacity(horizon);
    for (k, faces) in faces_per_t.into_iter().enumerate() {
        if faces.is_empty() {
            continue;
        }
        groups.push(FaceGroup {
            time_index: k + 1,
            obstacle_index: 0,
            faces,
        });
    }
    let sb = state_box(cfg)?;
    let mut problem = PlanningProblem::new(
        system,
        ObstacleSet::new(groups)?,
        cfg.risk.eps_total,
        cfg.risk.beta,
        cfg.solver.big_m.unwrap_or(1.0),
        cost_spec(cfg),
        sb.clone(),
        cfg.risk.allocation,
    )?;
    if cfg.solver.big_m.is_none() {
        let sb = sb.ok_or_else(|| {
            Error::Config("certifying big-M needs a bounded state box".into())
        })?;
        problem.big_m = big_m_value(&problem, &sb)?;
    }
    Ok(problem)
}

/// Open-loop problem with the true face moments (exact-moment planning).
pub fn open_loop_exact(cfg: &ScenarioConfig) -> Result<PlanningProblem> {
    let beliefs = wall_beliefs(cfg)?;
    let horizon = cfg.system.horizon;
    let faces_per_t = (1..=horizon)
        .map(|t| {
            beliefs
                .iter()
                .enumerate()
                .map(|(i, b)| UncertainFace::exact(b.clone(), t, 0, i))
                .collect()
        })
        .collect();
    finish_open_loop(cfg, faces_per_t)
}

/// Open-loop problem from one drawn coefficient sample set per face. The
/// walls are static, so each face's draws are shared across the horizon
/// (the estimate at t = 1 is the estimate at every t).
pub fn open_loop_sampled(cfg: &ScenarioConfig, seed: u64) -> Result<PlanningProblem> {
    open_loop_sampled_with(cfg, seed, None)
}

/// Same as [`open_loop_sampled`] with an overridden per-face sample count
/// (sweep studies).
pub fn open_loop_sampled_with(
    cfg: &ScenarioConfig,
    seed: u64,
    n_samples_override: Option<usize>,
) -> Result<PlanningProblem> {
    let beliefs = wall_beliefs(cfg)?;
    let ObstaclesConfig::StaticWalls { n_samples, .. } = &cfg.obstacles else {
        unreachable!("wall_beliefs already checked the mode");
    };
    let n_s = n_samples_override.unwrap_or(*n_samples);
    let draws: Vec<SampleSet> = beliefs
        .iter()
        .enumerate()
        .map(|(i, b)| gaussian_draw(b, n_s, &mut rng_for(seed, "wall-face-draws", i as u64)))
        .collect();
    let horizon = cfg.system.horizon;
    let faces_per_t: Result<Vec<Vec<UncertainFace>>> = (1..=horizon)
        .map(|t| {
            draws
                .iter()
                .enumerate()
                .map(|(i, s)| UncertainFace::from_samples(s.clone(), t, 0, i))
                .collect()
        })
        .collect();
    finish_open_loop(cfg, faces_per_t?)
}

/// Build the closed-loop scenario: lateral LQR folded into the obstacle's
/// affine dynamics, sample pools drawn from the true distributions under
/// the given seed.
pub fn closed_loop_spec(cfg: &ScenarioConfig, method: crate::planner::Method, seed: u64) -> Result<CcrhSpec> {
    let ObstaclesConfig::AdversaryCar {
        init_mean,
        init_var_diag,
        process_var_diag,
        meas_var_diag,
        lateral_target,
        car_length,
        car_width,
        ego_length,
        ego_width,
        n_samples,
    } = &cfg.obstacles
    else {
        return Err(Error::Config("scenario has no adversary car".into()));
    };
    let SystemTemplate::DoubleIntegrator2d { dt } = cfg.system.template else {
        return Err(Error::Config("the car scenario needs the planar double integrator".into()));
    };
    let ego = ego_system(cfg)?;

    // Lateral subsystem (y, vy) under LQR with unit weights; the closed
    // loop drives the car toward y = lateral_target.
    let a_lat = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b_lat = DMatrix::from_row_slice(2, 1, &[dt * dt / 2.0, dt]);
    let k_lat = dlqr_gain(&a_lat, &b_lat, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1))?;
    let a_cl = &a_lat - &b_lat * &k_lat;
    // u = -K ((y, vy) - (target, 0)) makes the drift B K (target, 0).
    let drift = &b_lat * &k_lat * DVector::from_row_slice(&[*lateral_target, 0.0]);

    // Full state (px, py, vx, vy): longitudinal double integrator rows plus
    // the lateral closed loop on (py, vy).
    let mut e_mat = DMatrix::zeros(4, 4);
    e_mat[(0, 0)] = 1.0;
    e_mat[(0, 2)] = dt;
    e_mat[(2, 2)] = 1.0;
    e_mat[(1, 1)] = a_cl[(0, 0)];
    e_mat[(1, 3)] = a_cl[(0, 1)];
    e_mat[(3, 1)] = a_cl[(1, 0)];
    e_mat[(3, 3)] = a_cl[(1, 1)];
    let mut f_vec = DVector::zeros(4);
    f_vec[1] = drift[0];
    f_vec[3] = drift[1];

    let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_row_slice(v));
    let init_belief = GaussianBelief::new(DVector::from_row_slice(init_mean), diag(init_var_diag))?;
    let noise_belief = GaussianBelief::new(DVector::zeros(4), diag(process_var_diag))?;
    let meas_belief = GaussianBelief::new(DVector::zeros(2), diag(meas_var_diag))?;

    let horizon = cfg.system.horizon;
    let init_samples = gaussian_draw(&init_belief, *n_samples, &mut rng_for(seed, "pool-init", 0));
    let noise_samples: Vec<SampleSet> = (0..2 * horizon)
        .map(|t| gaussian_draw(&noise_belief, *n_samples, &mut rng_for(seed, "pool-noise", t as u64)))
        .collect();

    let h_mat = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    Ok(CcrhSpec {
        ego,
        cost: cost_spec(cfg),
        state_box: state_box(cfg)?,
        eps_total: cfg.risk.eps_total,
        beta: cfg.risk.beta,
        big_m: cfg.solver.big_m,
        method,
        obstacle: ObstacleModel {
            e_mat,
            f_vec,
            h_mat,
            sigma_v: diag(meas_var_diag),
            // Point-ego convention: inflate the avoid region by the ego body.
            shape: ShapeTemplate::axis_aligned_car(
                car_length + ego_length,
                car_width + ego_width,
                4,
                4,
            )?,
            init_samples,
            noise_samples,
        },
        truth: TruthModel {
            init: init_belief,
            process_noise: noise_belief,
            measurement_noise: meas_belief,
        },
        policy: cfg.solver.on_infeasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_validate_and_round_trip() {
        for name in bundled_names() {
            let cfg = bundled(name).unwrap();
            assert_eq!(cfg.name, name);
            cfg.validate().unwrap();
            let text = cfg.to_json_pretty();
            let back = ScenarioConfig::from_json(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(config_digest(&back), config_digest(&cfg));
        }
        assert!(bundled("no_such_scenario").is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = open_loop_s51().to_json_pretty();
        text = text.replacen("\"name\"", "\"extra_key\": 1, \"name\"", 1);
        assert!(matches!(
            ScenarioConfig::from_json(&text),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn digest_tracks_content_not_formatting() {
        let a = open_loop_s51();
        let mut b = open_loop_s51();
        assert_eq!(config_digest(&a), config_digest(&b));
        b.risk.eps_total = 0.051;
        assert_ne!(config_digest(&a), config_digest(&b));
    }

    #[test]
    fn corridor_problem_matches_its_config() {
        let cfg = open_loop_s51();
        let p = open_loop_exact(&cfg).unwrap();
        assert_eq!(p.system.horizon(), 10);
        assert_eq!(p.obstacles.groups().len(), 10);
        assert_eq!(p.obstacles.n_constraints(), 20);
        // Improved allocation: 0.05 / (10 * 1) per face.
        let e = p.risk.get(3, 0, 1).unwrap();
        assert!((e - 0.005).abs() < 1e-15);
        // Certified big-M: positive shortfall exists at the far corner.
        assert!(p.big_m > 8.0 && p.big_m < 14.0, "big_m {}", p.big_m);
    }

    #[test]
    fn sampled_corridor_shares_draws_across_the_horizon() {
        let cfg = open_loop_s51();
        let p = open_loop_sampled_with(&cfg, 7, Some(64)).unwrap();
        let g = p.obstacles.groups();
        let first = g[0].faces[0].estimate().unwrap();
        let later = g[7].faces[0].estimate().unwrap();
        assert_eq!(first.mean_hat, later.mean_hat);
        assert_eq!(first.cov_hat, later.cov_hat);
        // Distinct faces use independent streams.
        let other = g[0].faces[1].estimate().unwrap();
        assert_ne!(first.mean_hat, other.mean_hat);
        // Same seed, same problem; different seed, different draws.
        let p2 = open_loop_sampled_with(&cfg, 7, Some(64)).unwrap();
        assert_eq!(
            first.mean_hat,
            p2.obstacles.groups()[0].faces[0].estimate().unwrap().mean_hat
        );
        let p3 = open_loop_sampled_with(&cfg, 8, Some(64)).unwrap();
        assert_ne!(
            first.mean_hat,
            p3.obstacles.groups()[0].faces[0].estimate().unwrap().mean_hat
        );
    }

    #[test]
    fn duel_spec_has_stable_lateral_pursuit() {
        let cfg = closed_loop_s52();
        let spec = closed_loop_spec(&cfg, crate::planner::Method::Mra, 3).unwrap();
        // Lateral block eigenvalues strictly inside the unit circle.
        let lat = DMatrix::from_row_slice(
            2,
            2,
            &[
                spec.obstacle.e_mat[(1, 1)],
                spec.obstacle.e_mat[(1, 3)],
                spec.obstacle.e_mat[(3, 1)],
                spec.obstacle.e_mat[(3, 3)],
            ],
        );
        for e in lat.complex_eigenvalues().iter() {
            assert!(e.norm() < 1.0);
        }
        // The drift pulls a parked car toward the target lane.
        let mut chi = DVector::from_row_slice(&[0.0, -2.0, 0.0, 0.0]);
        for _ in 0..400 {
            chi = &spec.obstacle.e_mat * chi + &spec.obstacle.f_vec;
        }
        assert!((chi[1] - 2.0).abs() < 1e-6, "settled at y = {}", chi[1]);
        assert_eq!(spec.obstacle.noise_samples.len(), 50);
        assert_eq!(spec.obstacle.n_samples(), 1000);
    }
}
