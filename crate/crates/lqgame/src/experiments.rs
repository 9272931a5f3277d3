//! Experiment presets, policy initialization, and the normalized-error
//! metric.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{GameSpec, InitLaw, JointPolicy, MixtureAtom};
use crate::nash_solver::NashSolution;
use crate::policy_eval::evaluate;

/// How a preset's initial policy is produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InitRule {
    /// A fixed policy.
    Explicit(JointPolicy),
    /// Each `K_t^i` drawn uniformly from the radius-`radius` Euclidean ball
    /// (entrywise vectorized) around the equilibrium gain.
    Ball { radius: f64, seed: u64 },
}

/// Solver defaults bundled with a preset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Step size per player (single entry = shared).
    pub etas: Vec<f64>,
    pub max_iters: usize,
    pub tol: f64,
    /// Rollouts per player per iteration for the sampled variant.
    pub num_traj: usize,
    /// Perturbation radius for the sampled variant.
    pub smoothing: f64,
}

/// A named, fully resolved experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPreset {
    pub name: String,
    pub spec: GameSpec,
    pub init: InitRule,
    pub settings: SolverSettings,
}

impl ExperimentPreset {
    /// The explicit initial policy, when the preset carries one.
    pub fn explicit_init(&self) -> Result<JointPolicy> {
        match &self.init {
            InitRule::Explicit(p) => Ok(p.clone()),
            InitRule::Ball { .. } => Err(Error::InvalidArgument(
                "preset initializes from a ball; resolve it with a Nash solution".into(),
            )),
        }
    }

    /// Resolves the initial policy, drawing from the ball when required.
    pub fn resolve_init(&self, nash: Option<&NashSolution>) -> Result<JointPolicy> {
        match &self.init {
            InitRule::Explicit(p) => Ok(p.clone()),
            InitRule::Ball { radius, seed } => {
                let nash = nash.ok_or_else(|| {
                    Error::InvalidArgument(
                        "ball initialization requires a Nash solution".into(),
                    )
                })?;
                Ok(init_ball(nash, *radius, *seed))
            }
        }
    }
}

/// Optional parameter overrides applied by [`make_preset`].
#[derive(Debug, Clone, Default)]
pub struct PresetOverrides {
    /// Replaces the noise covariance by `sigma2 * I`.
    pub sigma2: Option<f64>,
    /// Switches initialization to a ball of this radius around the
    /// equilibrium.
    pub radius: Option<f64>,
    /// Seed for ball initialization.
    pub seed: Option<u64>,
    pub etas: Option<Vec<f64>>,
    pub max_iters: Option<usize>,
    pub num_traj: Option<usize>,
    pub smoothing: Option<f64>,
    pub tol: Option<f64>,
}

fn diag2(a: f64, b: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
}

fn col2(a: f64, b: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 1, &[a, b])
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn two_player_spec(
    horizon: usize,
    a: DMatrix<f64>,
    b1: DMatrix<f64>,
    b2: DMatrix<f64>,
    q1: DMatrix<f64>,
    q2: DMatrix<f64>,
    r: f64,
    noise_cov: DMatrix<f64>,
    init_law: InitLaw,
) -> GameSpec {
    GameSpec {
        num_players: 2,
        horizon,
        state_dim: a.nrows(),
        control_dims: vec![b1.ncols(), b2.ncols()],
        a_mats: vec![a; horizon],
        b_mats: vec![vec![b1; horizon], vec![b2; horizon]],
        q_mats: vec![vec![q1; horizon + 1], vec![q2; horizon + 1]],
        r_mats: vec![vec![scalar(r); horizon], vec![scalar(r); horizon]],
        noise_cov,
        init_law,
    }
}

/// Builds one of the named presets.
///
/// * `g1` — scalar two-player fixture with a fully hand-checkable solution
///   (`K* = 1/3`, equilibrium cost `20/9`), starting from the zero policy.
/// * `mazumdar` — the two-dimensional benchmark with a two-point initial
///   law, `T = 10`, tight costs, and ball initialization around the
///   equilibrium; noise level `sigma^2` defaults to 1.
/// * `synthetic` — the `T = 5` instance driven by the sampled method with
///   explicit initial gains, `L = 200` rollouts and radius 0.5; `sigma^2`
///   defaults to 0.1.
/// * `remark31` — the small `T = 1` instance used to probe the noise
///   condition, with its stated initial gains `(0.2, 0.01)`.
pub fn make_preset(name: &str, overrides: &PresetOverrides) -> Result<ExperimentPreset> {
    let mut preset = match name {
        "g1" => {
            let spec = two_player_spec(
                1,
                scalar(1.0),
                scalar(1.0),
                scalar(1.0),
                scalar(1.0),
                scalar(1.0),
                1.0,
                scalar(1.0),
                InitLaw::Gaussian { mean: DVector::zeros(1), cov: DMatrix::identity(1, 1) },
            );
            let init = InitRule::Explicit(JointPolicy::zeros(&spec));
            ExperimentPreset {
                name: name.to_string(),
                spec,
                init,
                settings: SolverSettings {
                    etas: vec![0.1],
                    max_iters: 1000,
                    tol: 1e-8,
                    num_traj: 1000,
                    smoothing: 0.5,
                },
            }
        }
        "mazumdar" => {
            let spec = two_player_spec(
                10,
                DMatrix::from_row_slice(2, 2, &[0.588, 0.028, 0.570, 0.056]),
                col2(1.0, 1.0),
                col2(0.0, 1.0),
                diag2(0.01, 1.0),
                diag2(1.0, 0.147),
                0.01,
                DMatrix::identity(2, 2), // sigma^2 = 1 default
                InitLaw::FiniteMixture(vec![
                    MixtureAtom { point: DVector::from_vec(vec![1.0, 1.0]), prob: 0.5 },
                    MixtureAtom { point: DVector::from_vec(vec![1.0, 1.1]), prob: 0.5 },
                ]),
            );
            ExperimentPreset {
                name: name.to_string(),
                spec,
                init: InitRule::Ball { radius: 0.25, seed: 0 },
                settings: SolverSettings {
                    etas: vec![0.1],
                    max_iters: 5000,
                    tol: 1e-8,
                    num_traj: 200,
                    smoothing: 0.5,
                },
            }
        }
        "synthetic" => {
            let spec = two_player_spec(
                5,
                DMatrix::from_row_slice(2, 2, &[0.588, 0.28, 0.57, 0.56]),
                col2(1.0, 1.0),
                col2(0.5, 1.0),
                diag2(0.5, 1.0),
                diag2(1.0, 0.3),
                1.0,
                DMatrix::identity(2, 2) * 0.1, // sigma^2 = 0.1 default
                InitLaw::Gaussian {
                    mean: DVector::from_vec(vec![10.0, 12.0]),
                    cov: diag2(2.0, 3.0),
                },
            );
            let k1 = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
            let k2 = DMatrix::from_row_slice(1, 2, &[0.3, 0.15]);
            let init = InitRule::Explicit(JointPolicy {
                gains: vec![vec![k1; 5], vec![k2; 5]],
            });
            ExperimentPreset {
                name: name.to_string(),
                spec,
                init,
                settings: SolverSettings {
                    etas: vec![0.0005],
                    max_iters: 500,
                    tol: 1e-8,
                    num_traj: 200,
                    smoothing: 0.5,
                },
            }
        }
        "remark31" => {
            let spec = two_player_spec(
                1,
                diag2(0.2, 0.2),
                col2(0.1, 0.0),
                col2(0.0, -0.1),
                diag2(0.1, 0.1),
                diag2(0.1, 0.1),
                0.3,
                diag2(0.2, 0.2),
                InitLaw::Gaussian {
                    mean: DVector::from_vec(vec![0.3, 0.4]),
                    cov: diag2(0.2, 0.3),
                },
            );
            let k0 = DMatrix::from_row_slice(1, 2, &[0.2, 0.01]);
            let init = InitRule::Explicit(JointPolicy {
                gains: vec![vec![k0.clone()], vec![k0]],
            });
            ExperimentPreset {
                name: name.to_string(),
                spec,
                init,
                settings: SolverSettings {
                    etas: vec![0.05],
                    max_iters: 1000,
                    tol: 1e-8,
                    num_traj: 200,
                    smoothing: 0.5,
                },
            }
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };

    if let Some(s2) = overrides.sigma2 {
        if s2 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be non-negative, got {s2}"
            )));
        }
        let d = preset.spec.state_dim;
        preset.spec.noise_cov = DMatrix::identity(d, d) * s2;
    }
    if let Some(r) = overrides.radius {
        if r < 0.0 {
            return Err(Error::InvalidArgument(format!("radius must be non-negative, got {r}")));
        }
        preset.init = InitRule::Ball { radius: r, seed: overrides.seed.unwrap_or(0) };
    } else if let Some(seed) = overrides.seed {
        if let InitRule::Ball { radius, .. } = preset.init {
            preset.init = InitRule::Ball { radius, seed };
        }
    }
    if let Some(etas) = &overrides.etas {
        preset.settings.etas = etas.clone();
    }
    if let Some(iters) = overrides.max_iters {
        preset.settings.max_iters = iters;
    }
    if let Some(l) = overrides.num_traj {
        preset.settings.num_traj = l;
    }
    if let Some(r) = overrides.smoothing {
        preset.settings.smoothing = r;
    }
    if let Some(tol) = overrides.tol {
        preset.settings.tol = tol;
    }
    Ok(preset)
}

/// Draws each `K_t^i` uniformly from the Euclidean ball of radius `r`
/// (entrywise vectorized) centered at the equilibrium gain `K_t^{i*}`.
/// Deterministic per seed; draws happen player-major then by time.
pub fn init_ball(nash: &NashSolution, r: f64, seed: u64) -> JointPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gains = nash
        .k_star
        .gains
        .iter()
        .map(|seq| {
            seq.iter()
                .map(|k_star| {
                    let (rows, cols) = k_star.shape();
                    let dim = (rows * cols) as f64;
                    let mut dir;
                    loop {
                        dir = DMatrix::from_fn(rows, cols, |_, _| {
                            rng.sample::<f64, _>(StandardNormal)
                        });
                        if dir.norm() > 0.0 {
                            break;
                        }
                    }
                    let u: f64 = rng.random();
                    let scale = r * u.powf(1.0 / dim) / dir.norm();
                    k_star + dir * scale
                })
                .collect()
        })
        .collect();
    JointPolicy { gains }
}

/// Per-player normalized error `(C^i(K) - C^i(K*)) / C^i(K*)` from exact
/// costs. Returned raw: values can be marginally negative (order 1e-9) from
/// rounding near the equilibrium.
pub fn normalized_error(
    spec: &GameSpec,
    policy: &JointPolicy,
    nash: &NashSolution,
) -> Result<Vec<f64>> {
    let eval = evaluate(spec, policy)?;
    Ok(eval
        .costs
        .iter()
        .zip(&nash.eq_costs)
        .map(|(c, c_star)| (c - c_star) / c_star)
        .collect())
}
