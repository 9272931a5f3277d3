//! N-player general-sum linear-quadratic games over a finite horizon.
//!
//! The state evolves as `x_{t+1} = A_t x_t + sum_i B_t^i u_t^i + w_t` with
//! Gaussian noise, each player pays quadratic state and control costs, and
//! play is restricted to linear feedback `u_t^i = -K_t^i x_t`. This crate
//! provides:
//!
//! - [`nash_solver`]: the exact Nash equilibrium by backward induction on
//!   the coupled Riccati system, with one dense joint solve per time step;
//! - [`policy_eval`]: exact evaluation of any joint policy (value matrices,
//!   state second moments, costs, policy gradients);
//! - [`npg`]: model-based natural policy gradient with simultaneous player
//!   updates, plus the noise condition, contraction coefficient, step-size
//!   bounds and iteration bound that certify linear convergence;
//! - [`zeroth_order`]: the model-free variant driven by sphere-perturbation
//!   gradient estimates and empirical state covariances;
//! - [`simulation`]: seeded, schedule-independent stochastic rollouts and
//!   Monte-Carlo cost estimation;
//! - [`experiments`] and [`cli`]: named experiment presets, JSON
//!   configuration, and CSV trace emission.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod game_model;
mod linalg;
pub mod nash_solver;
pub mod npg;
pub mod policy_eval;
pub mod serde_mat;
pub mod simulation;
pub mod zeroth_order;

pub use error::{Error, Result};
pub use experiments::{
    init_ball, make_preset, normalized_error, ExperimentPreset, InitRule, PresetOverrides,
    SolverSettings,
};
pub use game_model::{
    closed_loop, model_constants, random_policy, random_spec, second_moment, validate_spec,
    GameSpec, InitLaw, JointPolicy, MixtureAtom, ModelConstants, ValidationReport,
};
pub use nash_solver::{equilibrium_cost, solve_nash, NashSolution};
pub use npg::{
    best_response_gap, check_assumptions, npg_step, npg_step_per_player, run_npg,
    AssumptionReport, NpgOptions, NpgTrace, RunStatus,
};
pub use policy_eval::{
    evaluate, finite_difference_gradient, natural_gradient, smoothness_identity,
    PolicyEvaluation,
};
pub use simulation::{derive_stream, mc_cost, rollout_from, sample_trajectory, Trajectory};
pub use zeroth_order::{run_npg_free, sample_sphere, zo_estimate, ZoConfig, ZoEstimate};
