//! Model-free natural policy gradient: sphere-perturbation gradient
//! estimates, empirical state covariances, and the sample-based update
//! loop. Only sampled rollout data enters the updates; exact evaluation is
//! used purely for trace reporting.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{require_valid, GameSpec, JointPolicy};
use crate::linalg;
use crate::nash_solver::NashSolution;
use crate::npg::{drive_run, NpgOptions, NpgTrace};
use crate::simulation::{derive_stream, init_factor, noise_factor, sample_trajectory_with};

/// Configuration of the sampled estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoConfig {
    /// Trajectories per player per iteration (`L`).
    pub num_traj: usize,
    /// Perturbation radius `r_i` per player (one entry is shared).
    pub radii: Vec<f64>,
    /// Ridge coefficient: `epsilon * tr(Sigma_hat)/d * I` is added before
    /// inverting the empirical covariance, keeping the inverse defined for
    /// small `L` or unlucky draws.
    pub ridge: f64,
    pub seed: u64,
}

impl ZoConfig {
    pub fn new(num_traj: usize, radius: f64, seed: u64) -> Self {
        ZoConfig { num_traj, radii: vec![radius], ridge: 1e-8, seed }
    }

    fn radius_for(&self, player: usize) -> f64 {
        if self.radii.len() == 1 {
            self.radii[0]
        } else {
            self.radii[player]
        }
    }

    fn check(&self, spec: &GameSpec) -> Result<()> {
        if self.num_traj == 0 {
            return Err(Error::InvalidArgument("num_traj must be at least 1".into()));
        }
        if self.radii.is_empty()
            || (self.radii.len() != 1 && self.radii.len() != spec.num_players)
        {
            return Err(Error::InvalidArgument(format!(
                "expected 1 or {} smoothing radii, got {}",
                spec.num_players,
                self.radii.len()
            )));
        }
        if self.radii.iter().any(|&r| r <= 0.0) {
            return Err(Error::InvalidArgument("smoothing radii must be positive".into()));
        }
        if self.ridge < 0.0 {
            return Err(Error::InvalidArgument("ridge must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sampled gradient and covariance estimates for one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoEstimate {
    /// Per time `t`, `(D_i / (L r_i^2)) sum_l c_hat * U` of shape `k_i x d`.
    #[serde(with = "crate::serde_mat::mat_list")]
    pub grad_hat: Vec<DMatrix<f64>>,
    /// Per time `t`, `(1/L) sum_l x_t x_t^T` from the rollouts perturbed at
    /// `t` (whose `x_t` is distributed as under the unperturbed policy).
    #[serde(with = "crate::serde_mat::mat_list")]
    pub sigma_hat: Vec<DMatrix<f64>>,
}

/// Uniform draw from matrices with Frobenius norm exactly `r`: a standard
/// Gaussian matrix rescaled onto the sphere (rotation-invariant, so the
/// direction is uniform). The measure-zero all-zero draw is resampled.
pub fn sample_sphere<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    r: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    loop {
        let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            return g * (r / norm);
        }
    }
}

/// Sphere-perturbation estimates of player `i`'s gradients and state
/// covariances at `policy`.
///
/// For each trajectory `l` and time `t`, only `K_t^i` is perturbed by a
/// sphere draw `U` (all other players and times stay fixed); one full
/// trajectory is rolled out from a fresh initial state, the player's total
/// realized cost weights `U` in the gradient estimate, and the state outer
/// product at `t` feeds the covariance estimate. Rollouts are parallel
/// across `(l, t)` with fixed-order averaging, so results are
/// schedule-independent.
pub fn zo_estimate(
    spec: &GameSpec,
    policy: &JointPolicy,
    player: usize,
    cfg: &ZoConfig,
    iteration: usize,
) -> Result<ZoEstimate> {
    require_valid(spec)?;
    policy.check_against(spec)?;
    cfg.check(spec)?;
    if player >= spec.num_players {
        return Err(Error::PlayerOutOfRange { player, num_players: spec.num_players });
    }

    let t_max = spec.horizon;
    let l_total = cfg.num_traj;
    let d = spec.state_dim;
    let k_i = spec.control_dims[player];
    let r_i = cfg.radius_for(player);
    let dim_i = (k_i * d) as f64;
    let chol_w = noise_factor(spec)?;
    let x0_factor = init_factor(spec)?;

    let n_players = spec.num_players as u64;
    let base = (iteration as u64 * n_players + player as u64) * (l_total as u64) * (t_max as u64);

    let samples: Vec<(f64, DMatrix<f64>, DVector<f64>)> = (0..l_total * t_max)
        .into_par_iter()
        .map(|flat| {
            let t = flat % t_max;
            let mut rng = derive_stream(cfg.seed, base + flat as u64);
            let u = sample_sphere(k_i, d, r_i, &mut rng);
            let mut perturbed = policy.clone();
            perturbed.gains[player][t] += &u;
            let traj =
                sample_trajectory_with(spec, &perturbed, &chol_w, x0_factor.as_ref(), &mut rng);
            let x_t = traj.states[t].clone();
            (traj.costs[player], u, x_t)
        })
        .collect();

    let mut grad_hat = vec![DMatrix::zeros(k_i, d); t_max];
    let mut sigma_hat = vec![DMatrix::zeros(d, d); t_max];
    for l in 0..l_total {
        for t in 0..t_max {
            let (cost, u, x_t) = &samples[l * t_max + t];
            grad_hat[t] += u * *cost;
            sigma_hat[t] += x_t * x_t.transpose();
        }
    }
    let grad_scale = dim_i / (r_i * r_i * l_total as f64);
    let sigma_scale = 1.0 / l_total as f64;
    for t in 0..t_max {
        grad_hat[t] *= grad_scale;
        sigma_hat[t] *= sigma_scale;
    }
    Ok(ZoEstimate { grad_hat, sigma_hat })
}

/// Sample-based natural policy gradient run. Every iteration each player
/// independently estimates its gradients and covariances from its own
/// rollouts, then all players update simultaneously via
/// `K <- K - eta grad_hat (Sigma_hat + ridge tr(Sigma_hat)/d I)^{-1}`.
/// The trace records exact costs (reporting only).
pub fn run_npg_free(
    spec: &GameSpec,
    init_policy: &JointPolicy,
    opts: &NpgOptions,
    cfg: &ZoConfig,
    nash: Option<&NashSolution>,
) -> Result<NpgTrace> {
    cfg.check(spec)?;
    let d = spec.state_dim;
    let eye = DMatrix::<f64>::identity(d, d);

    drive_run(spec, init_policy, opts, nash, |policy, _eval, iteration| {
        let estimates: Vec<ZoEstimate> = (0..spec.num_players)
            .map(|i| zo_estimate(spec, policy, i, cfg, iteration))
            .collect::<Result<_>>()?;

        let mut next = policy.clone();
        for (i, est) in estimates.iter().enumerate() {
            let eta = if opts.etas.len() == 1 { opts.etas[0] } else { opts.etas[i] };
            for t in 0..spec.horizon {
                let sigma = &est.sigma_hat[t] + &eye * (cfg.ridge * est.sigma_hat[t].trace() / d as f64);
                if linalg::sym_eig_min(&sigma) < 1e-12 {
                    return Err(Error::SingularCovariance(t));
                }
                // K - eta * grad * Sigma^{-1}, via a solve on the transpose.
                let scaled = sigma
                    .clone()
                    .lu()
                    .solve(&est.grad_hat[t].transpose())
                    .ok_or(Error::SingularCovariance(t))?;
                next.gains[i][t] -= scaled.transpose() * eta;
            }
        }
        Ok(next)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{make_preset, PresetOverrides};
    use crate::policy_eval::evaluate;
    use crate::simulation::rollout_from;

    fn g1() -> GameSpec {
        make_preset("g1", &PresetOverrides::default()).unwrap().spec
    }

    #[test]
    fn sphere_draws_have_exact_norm() {
        let mut rng = derive_stream(0, 0);
        for _ in 0..50 {
            let u = sample_sphere(2, 3, 0.7, &mut rng);
            assert!((u.norm() - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_draws_are_deterministic() {
        let a = sample_sphere(2, 2, 1.0, &mut derive_stream(5, 9));
        let b = sample_sphere(2, 2, 1.0, &mut derive_stream(5, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn sphere_mean_is_centered() {
        let mut rng = derive_stream(1, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let u = sample_sphere(1, 2, 1.0, &mut rng);
            sum += u[(0, 0)];
            sum_sq += u[(0, 0)] * u[(0, 0)];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let stderr = (var / n as f64).sqrt();
        assert!(mean.abs() <= 4.0 * stderr);
    }

    #[test]
    fn rank_one_covariance_needs_ridge() {
        let spec = make_preset("synthetic", &PresetOverrides::default()).unwrap().spec;
        let policy = JointPolicy::zeros(&spec);
        let cfg = ZoConfig::new(1, 0.5, 3);
        let est = zo_estimate(&spec, &policy, 0, &cfg, 0).unwrap();
        for t in 0..spec.horizon {
            // One sample: rank-1 and singular in d = 2.
            assert!(linalg::sym_eig_min(&est.sigma_hat[t]) < 1e-12);
            let ridged = &est.sigma_hat[t]
                + DMatrix::identity(2, 2) * (1e-8 * est.sigma_hat[t].trace() / 2.0);
            assert!(linalg::sym_eig_min(&ridged) > 0.0);
        }
    }

    #[test]
    fn estimates_are_bit_identical_across_runs() {
        let spec = g1();
        let policy = JointPolicy::zeros(&spec);
        let cfg = ZoConfig::new(64, 0.5, 17);
        let a = zo_estimate(&spec, &policy, 0, &cfg, 4).unwrap();
        let b = zo_estimate(&spec, &policy, 0, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbation_at_t_cannot_touch_earlier_states() {
        // Replay identical noise through two policies differing only in the
        // time-t gain of one player: states up to and including t match
        // exactly.
        let spec = make_preset("synthetic", &PresetOverrides::default()).unwrap().spec;
        let base = JointPolicy::zeros(&spec);
        let t_pert = 2;
        let mut perturbed = base.clone();
        perturbed.gains[0][t_pert][(0, 0)] += 0.5;

        let mut rng = derive_stream(3, 1);
        let chol_w = noise_factor(&spec).unwrap();
        let x0f = init_factor(&spec).unwrap();
        let x0 = crate::simulation::draw_initial_state(&spec, x0f.as_ref(), &mut rng);
        let noises: Vec<DVector<f64>> = (0..spec.horizon)
            .map(|_| {
                &chol_w
                    * DVector::from_fn(spec.state_dim, |_, _| {
                        rng.sample::<f64, _>(StandardNormal)
                    })
            })
            .collect();

        let a = rollout_from(&spec, &base, x0.clone(), &noises);
        let b = rollout_from(&spec, &perturbed, x0, &noises);
        for t in 0..=t_pert {
            assert_eq!(a.states[t], b.states[t], "state changed at t={t}");
        }
        assert_ne!(a.states[t_pert + 1], b.states[t_pert + 1]);
    }

    #[test]
    fn gradient_estimate_consistency_in_l() {
        // Median relative error over seeds must decrease as L grows. At the
        // experiment-scale radius 0.5 the estimator lands within 5% at
        // L = 1e5 (single-point estimates at small radii keep a large
        // variance floor, so the radius matters more than the bias here).
        let spec = g1();
        let policy = JointPolicy::zeros(&spec);
        let exact = evaluate(&spec, &policy).unwrap().grads[0][0].clone();
        let exact_norm = exact.norm();

        let median_err = |l: usize, r: f64| {
            let mut errs: Vec<f64> = (0..9)
                .map(|seed| {
                    let cfg = ZoConfig { num_traj: l, radii: vec![r], ridge: 1e-8, seed };
                    let est = zo_estimate(&spec, &policy, 0, &cfg, 0).unwrap();
                    (&est.grad_hat[0] - &exact).norm() / exact_norm
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            errs[4]
        };

        let e3 = median_err(1_000, 0.5);
        let e4 = median_err(10_000, 0.5);
        let e5 = median_err(100_000, 0.5);
        assert!(e4 < e3, "error should shrink: L=1e3 {e3} vs L=1e4 {e4}");
        assert!(e5 < e4, "error should shrink: L=1e4 {e4} vs L=1e5 {e5}");
        assert!(e5 <= 0.05, "relative error at L=1e5 was {e5}");
    }

    #[test]
    fn covariance_estimate_consistency() {
        let spec = g1();
        let policy = JointPolicy::zeros(&spec);
        let exact = evaluate(&spec, &policy).unwrap().sigma_t[0].clone();
        let cfg = ZoConfig { num_traj: 100_000, radii: vec![0.05], ridge: 1e-8, seed: 2 };
        let est = zo_estimate(&spec, &policy, 0, &cfg, 0).unwrap();
        let rel = (&est.sigma_hat[0] - &exact).norm() / exact.norm();
        assert!(rel <= 0.05, "relative covariance error {rel}");
    }
}
