//! Seeded stochastic rollouts: trajectories, realized costs, Monte-Carlo
//! cost estimation.
//!
//! Randomness is managed with counter-derived ChaCha streams so every draw
//! is a pure function of `(seed, stream index, position)`. Parallel and
//! serial execution therefore produce identical results; reductions are
//! performed in fixed index order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game_model::{require_valid, GameSpec, InitLaw, JointPolicy};
use crate::linalg;

/// One realized path of the closed-loop system.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0 .. x_T`.
    pub states: Vec<DVector<f64>>,
    /// Per player, `u_0^i .. u_{T-1}^i` with `u_t^i = -K_t^i x_t`.
    pub controls: Vec<Vec<DVector<f64>>>,
    /// Per-player realized total cost, including the terminal state cost.
    pub costs: Vec<f64>,
}

/// Independent random stream number `index` under `seed`.
pub fn derive_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Cholesky factor of the noise covariance, used to draw `w_t ~ N(0, W)`.
pub(crate) fn noise_factor(spec: &GameSpec) -> Result<DMatrix<f64>> {
    spec.noise_cov
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::CholeskyFailure)
}

/// Square-root factor of the initial law's covariance (PSD allowed, so
/// point masses and degenerate Gaussians sample fine).
pub(crate) fn init_factor(spec: &GameSpec) -> Result<Option<DMatrix<f64>>> {
    match &spec.init_law {
        InitLaw::Gaussian { cov, .. } => Ok(Some(linalg::psd_factor(cov)?)),
        InitLaw::FiniteMixture(_) => Ok(None),
    }
}

fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draws `x_0` from the initial law. Draw order is fixed: Gaussian laws
/// consume `d` normals, mixtures one uniform.
pub(crate) fn draw_initial_state<R: Rng + ?Sized>(
    spec: &GameSpec,
    factor: Option<&DMatrix<f64>>,
    rng: &mut R,
) -> DVector<f64> {
    match &spec.init_law {
        InitLaw::Gaussian { mean, .. } => {
            let z = standard_normal_vec(rng, spec.state_dim);
            mean + factor.expect("gaussian law requires a factor") * z
        }
        InitLaw::FiniteMixture(atoms) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for atom in atoms {
                acc += atom.prob;
                if u < acc {
                    return atom.point.clone();
                }
            }
            atoms.last().expect("non-empty mixture").point.clone()
        }
    }
}

/// Deterministic propagation of the closed loop from `x0` with the given
/// noise sequence (`noises.len() == T`). Exposed so estimators and tests can
/// replay identical noise under different policies.
pub fn rollout_from(
    spec: &GameSpec,
    policy: &JointPolicy,
    x0: DVector<f64>,
    noises: &[DVector<f64>],
) -> Trajectory {
    let n = spec.num_players;
    let t_max = spec.horizon;
    debug_assert_eq!(noises.len(), t_max);

    let mut states = Vec::with_capacity(t_max + 1);
    let mut controls: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(t_max); n];
    let mut costs = vec![0.0; n];

    let mut x = x0;
    for t in 0..t_max {
        let mut next = &spec.a_mats[t] * &x + &noises[t];
        for i in 0..n {
            let u = -(&policy.gains[i][t] * &x);
            costs[i] += (x.transpose() * &spec.q_mats[i][t] * &x)[(0, 0)]
                + (u.transpose() * &spec.r_mats[i][t] * &u)[(0, 0)];
            next += &spec.b_mats[i][t] * &u;
            controls[i].push(u);
        }
        states.push(x);
        x = next;
    }
    for i in 0..n {
        costs[i] += (x.transpose() * &spec.q_mats[i][t_max] * &x)[(0, 0)];
    }
    states.push(x);

    Trajectory { states, controls, costs }
}

/// Samples one trajectory from the given stream: `x_0` from the initial
/// law, then `w_t ~ N(0, W)` via the Cholesky factor of `W`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    spec: &GameSpec,
    policy: &JointPolicy,
    rng: &mut R,
) -> Result<Trajectory> {
    require_valid(spec)?;
    policy.check_against(spec)?;
    let chol_w = noise_factor(spec)?;
    let x0_factor = init_factor(spec)?;
    Ok(sample_trajectory_with(spec, policy, &chol_w, x0_factor.as_ref(), rng))
}

/// Sampling core with pre-computed factors; used by the Monte-Carlo and
/// zeroth-order loops to avoid refactoring per rollout.
pub(crate) fn sample_trajectory_with<R: Rng + ?Sized>(
    spec: &GameSpec,
    policy: &JointPolicy,
    chol_w: &DMatrix<f64>,
    x0_factor: Option<&DMatrix<f64>>,
    rng: &mut R,
) -> Trajectory {
    let x0 = draw_initial_state(spec, x0_factor, rng);
    let noises: Vec<DVector<f64>> = (0..spec.horizon)
        .map(|_| chol_w * standard_normal_vec(rng, spec.state_dim))
        .collect();
    rollout_from(spec, policy, x0, &noises)
}

/// Monte-Carlo estimate of the per-player costs: `(mean, standard error)`
/// over `num_traj` independent trajectories. Trajectory `j` uses stream `j`
/// of `seed`, and the averages are reduced in index order, so the result is
/// independent of the parallel schedule.
pub fn mc_cost(
    spec: &GameSpec,
    policy: &JointPolicy,
    num_traj: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if num_traj < 2 {
        return Err(Error::InvalidArgument(format!(
            "num_traj must be at least 2, got {num_traj}"
        )));
    }
    require_valid(spec)?;
    policy.check_against(spec)?;
    let chol_w = noise_factor(spec)?;
    let x0_factor = init_factor(spec)?;

    let costs: Vec<Vec<f64>> = (0..num_traj)
        .into_par_iter()
        .map(|j| {
            let mut rng = derive_stream(seed, j as u64);
            sample_trajectory_with(spec, policy, &chol_w, x0_factor.as_ref(), &mut rng).costs
        })
        .collect();

    let n = spec.num_players;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mean = costs.iter().map(|c| c[i]).sum::<f64>() / num_traj as f64;
        let var = costs.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>()
            / (num_traj - 1) as f64;
        out.push((mean, (var / num_traj as f64).sqrt()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{make_preset, PresetOverrides};
    use crate::game_model::JointPolicy;
    use crate::nash_solver::solve_nash;
    use crate::policy_eval::evaluate;
    use nalgebra::DMatrix;

    fn g1() -> GameSpec {
        make_preset("g1", &PresetOverrides::default()).unwrap().spec
    }

    #[test]
    fn near_deterministic_rollout_matches_hand_value() {
        // Point-mass x0 = 1 and W ~ 0: realized cost at K = 0 is
        // x0^2 (Q + A' Q_T A) = 2 (no noise accumulation term).
        let mut spec = g1();
        spec.noise_cov = DMatrix::from_element(1, 1, 1e-20);
        spec.init_law = InitLaw::FiniteMixture(vec![crate::game_model::MixtureAtom {
            point: DVector::from_element(1, 1.0),
            prob: 1.0,
        }]);
        let mut rng = derive_stream(0, 0);
        let traj = sample_trajectory(&spec, &JointPolicy::zeros(&spec), &mut rng).unwrap();
        for i in 0..2 {
            assert!((traj.costs[i] - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn same_stream_is_bit_identical() {
        let spec = g1();
        let policy = JointPolicy::zeros(&spec);
        let a = sample_trajectory(&spec, &policy, &mut derive_stream(7, 3)).unwrap();
        let b = sample_trajectory(&spec, &policy, &mut derive_stream(7, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trajectory_obeys_dynamics_and_feedback() {
        let spec = make_preset("synthetic", &PresetOverrides::default()).unwrap().spec;
        let policy = make_preset("synthetic", &PresetOverrides::default())
            .unwrap()
            .explicit_init()
            .unwrap();
        let mut rng = derive_stream(1, 0);
        let chol_w = noise_factor(&spec).unwrap();
        let x0f = init_factor(&spec).unwrap();
        let x0 = draw_initial_state(&spec, x0f.as_ref(), &mut rng);
        let noises: Vec<DVector<f64>> = (0..spec.horizon)
            .map(|_| &chol_w * DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let traj = rollout_from(&spec, &policy, x0, &noises);
        for t in 0..spec.horizon {
            let mut expected = &spec.a_mats[t] * &traj.states[t] + &noises[t];
            for i in 0..spec.num_players {
                assert!(
                    (&traj.controls[i][t] + &policy.gains[i][t] * &traj.states[t]).norm() < 1e-12
                );
                expected += &spec.b_mats[i][t] * &traj.controls[i][t];
            }
            assert!((&traj.states[t + 1] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn mc_cost_matches_exact_cost_at_zero_policy() {
        let spec = g1();
        let policy = JointPolicy::zeros(&spec);
        let exact = evaluate(&spec, &policy).unwrap().costs;
        let mc = mc_cost(&spec, &policy, 100_000, 12).unwrap();
        for i in 0..2 {
            let (mean, stderr) = mc[i];
            assert!(
                (mean - exact[i]).abs() <= 3.0 * stderr,
                "player {i}: mean {mean} vs exact {} (stderr {stderr})",
                exact[i]
            );
        }
    }

    #[test]
    fn mc_cost_matches_equilibrium_cost() {
        let spec = g1();
        let nash = solve_nash(&spec).unwrap();
        let mc = mc_cost(&spec, &nash.k_star, 100_000, 34).unwrap();
        for i in 0..2 {
            let (mean, stderr) = mc[i];
            assert!((mean - 20.0 / 9.0).abs() <= 3.0 * stderr);
        }
    }

    #[test]
    fn mc_cost_is_reproducible() {
        let spec = g1();
        let policy = JointPolicy::zeros(&spec);
        let a = mc_cost(&spec, &policy, 2, 99).unwrap();
        let b = mc_cost(&spec, &policy, 2, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stderr_shrinks_with_sqrt_num_traj() {
        let spec = g1();
        let policy = JointPolicy::zeros(&spec);
        let mut ratios = Vec::new();
        for seed in 0..20 {
            let small = mc_cost(&spec, &policy, 4_000, seed).unwrap()[0].1;
            let large = mc_cost(&spec, &policy, 8_000, seed).unwrap()[0].1;
            ratios.push(small / large);
        }
        let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(
            (1.25..=1.6).contains(&mean_ratio),
            "expected ~sqrt(2) stderr shrink, got {mean_ratio}"
        );
    }

    #[test]
    fn cholesky_failure_on_zero_noise() {
        let spec = make_preset("g1", &PresetOverrides { sigma2: Some(0.0), ..Default::default() })
            .unwrap()
            .spec;
        let policy = JointPolicy::zeros(&spec);
        match sample_trajectory(&spec, &policy, &mut derive_stream(0, 0)) {
            Err(Error::CholeskyFailure) => {}
            other => panic!("expected CholeskyFailure, got {other:?}"),
        }
    }

    #[test]
    fn sampled_second_moment_matches_exact() {
        let spec = g1();
        let policy = JointPolicy::zeros(&spec);
        let eval = evaluate(&spec, &policy).unwrap();
        let n_traj = 100_000;
        let chol_w = noise_factor(&spec).unwrap();
        let x0f = init_factor(&spec).unwrap();
        let mut sums = vec![0.0; spec.horizon + 1];
        let mut sq_sums = vec![0.0; spec.horizon + 1];
        for j in 0..n_traj {
            let mut rng = derive_stream(55, j);
            let traj = sample_trajectory_with(&spec, &policy, &chol_w, x0f.as_ref(), &mut rng);
            for t in 0..=spec.horizon {
                let v = traj.states[t][0] * traj.states[t][0];
                sums[t] += v;
                sq_sums[t] += v * v;
            }
        }
        for t in 0..=spec.horizon {
            let mean = sums[t] / n_traj as f64;
            let var = (sq_sums[t] / n_traj as f64 - mean * mean).max(0.0);
            let stderr = (var / n_traj as f64).sqrt();
            assert!(
                (mean - eval.sigma_t[t][(0, 0)]).abs() <= 3.0 * stderr,
                "t={t}: {mean} vs {}",
                eval.sigma_t[t][(0, 0)]
            );
        }
    }
}
