//! Chance-constrained trajectory planning under moment uncertainty.
//!
//! A discrete-time linear system must avoid obstacles whose half-space
//! descriptions are Gaussian with unknown moments; only finite sample sets are
//! available. A joint chance constraint over the horizon is split into
//! per-step, per-face constraints by risk allocation, each reformulated as a
//! second-order cone constraint with big-M disjunction binaries, and the
//! resulting mixed-integer SOCP is solved by branch-and-bound. Sample-moment
//! estimates are robustified by concentration radii (`r1` for the mean, `r2`
//! for the covariance) so that the plan keeps its risk guarantee with high
//! probability despite estimation error.
//!
//! Module map:
//! - [`stats`]: special functions, distribution quantiles, Gaussian sampling,
//!   sample moments.
//! - [`concentration`]: the radii `r1`/`r2` and robustified half-spaces.
//! - [`model`]: system/rollout types, risk allocation, big-M certificates.
//! - [`conic`]: cone-program representation and the SOCP backend.
//! - [`planner`]: constraint assembly (exact-moment, moment-robust, scenario),
//!   branch-and-bound, risk redistribution.
//! - [`prediction`]: Kalman filtering and sample propagation for a dynamic
//!   obstacle, with per-step face estimates.
//! - [`closed_loop`]: the receding-horizon re-planning loop.
//! - [`scenario`]: run configuration (serde schema, bundled case studies).
//! - [`eval`]: Monte-Carlo evaluation harnesses and report files.

pub mod closed_loop;
pub mod concentration;
pub mod conic;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod planner;
pub mod prediction;
pub mod scenario;
pub mod stats;

pub use concentration::RobustHalfSpace;
pub use error::{Error, Result};
pub use model::{LtvSystem, PlanningProblem, RiskAllocation, UncertainFace};
pub use planner::{Method, PlanSolution};
pub use stats::{GaussianBelief, MomentEstimate, SampleSet};
