//! Exact model-based evaluation of a joint policy: value matrices, costs,
//! state second moments, stationarity matrices `E_{t,i}`, and gradients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{closed_loop, require_valid, GameSpec, JointPolicy};
use crate::linalg;
use crate::serde_mat;

/// Default central-difference step for the gradient check.
pub const FD_DEFAULT_STEP: f64 = 1e-5;

/// Everything exactly computable about a joint policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    /// `P_{t,i}`: per player `T+1` symmetric `d x d` value matrices from the
    /// backward closed-loop recursion with terminal `Q_T^i`.
    #[serde(with = "serde_mat::mat_list2")]
    pub p_k: Vec<Vec<DMatrix<f64>>>,
    /// `N_{t,i} = N_{t+1,i} + Tr(W P_{t+1,i})`, `N_{T,i} = 0`.
    pub n_k: Vec<Vec<f64>>,
    /// State second moments `Sigma_t = E[x_t x_t^T]`, `t = 0..=T`, from the
    /// forward propagation `Sigma_{t+1} = M_t Sigma_t M_t' + W`.
    #[serde(with = "serde_mat::mat_list")]
    pub sigma_t: Vec<DMatrix<f64>>,
    /// `Sigma_K = sum_t Sigma_t`.
    #[serde(with = "serde_mat::mat")]
    pub sigma_sum: DMatrix<f64>,
    /// Stationarity matrices
    /// `E_{t,i} = R_t^i K_t^i - (B_t^i)' P_{t+1,i} (A_t - sum_j B_t^j K_t^j)`;
    /// zero exactly at the equilibrium.
    #[serde(with = "serde_mat::mat_list2")]
    pub e_mats: Vec<Vec<DMatrix<f64>>>,
    /// Policy gradients `grad_{K_t^i} C^i = 2 E_{t,i} Sigma_t`.
    #[serde(with = "serde_mat::mat_list2")]
    pub grads: Vec<Vec<DMatrix<f64>>>,
    /// Per-player exact cost `Tr(Sigma_0 P_{0,i}) + N_{0,i}`.
    pub costs: Vec<f64>,
}

impl PolicyEvaluation {
    /// Largest spectral norm of `E_{t,i}` over `t` for player `i`.
    pub fn max_e_norm(&self, i: usize) -> f64 {
        self.e_mats[i]
            .iter()
            .map(linalg::spectral_norm)
            .fold(0.0_f64, f64::max)
    }

    /// Largest spectral norm of `E_{t,i}` over all players and times.
    pub fn max_e_norm_all(&self) -> f64 {
        (0..self.e_mats.len())
            .map(|i| self.max_e_norm(i))
            .fold(0.0_f64, f64::max)
    }
}

/// Evaluates `policy` on `spec` exactly.
pub fn evaluate(spec: &GameSpec, policy: &JointPolicy) -> Result<PolicyEvaluation> {
    require_valid(spec)?;
    policy.check_against(spec)?;
    let n = spec.num_players;
    let d = spec.state_dim;
    let t_max = spec.horizon;

    let closed: Vec<DMatrix<f64>> = (0..t_max)
        .map(|t| closed_loop(spec, policy, t))
        .collect::<Result<_>>()?;

    // Backward value recursion per player.
    let mut p_k: Vec<Vec<DMatrix<f64>>> = (0..n)
        .map(|i| {
            let mut seq = vec![DMatrix::zeros(d, d); t_max + 1];
            seq[t_max] = spec.q_mats[i][t_max].clone();
            seq
        })
        .collect();
    for t in (0..t_max).rev() {
        let m = &closed[t];
        for i in 0..n {
            let k_i = &policy.gains[i][t];
            let p_t = &spec.q_mats[i][t]
                + k_i.transpose() * &spec.r_mats[i][t] * k_i
                + m.transpose() * &p_k[i][t + 1] * m;
            if !linalg::all_finite(&p_t) {
                return Err(Error::Diverged(t));
            }
            p_k[i][t] = linalg::symmetrize(&p_t);
        }
    }

    let mut n_k = vec![vec![0.0; t_max + 1]; n];
    for i in 0..n {
        for t in (0..t_max).rev() {
            n_k[i][t] = n_k[i][t + 1] + (&spec.noise_cov * &p_k[i][t + 1]).trace();
            if !n_k[i][t].is_finite() {
                return Err(Error::Diverged(t));
            }
        }
    }

    // Forward second-moment propagation.
    let mut sigma_t = Vec::with_capacity(t_max + 1);
    sigma_t.push(spec.init_second_moment());
    for t in 0..t_max {
        let m = &closed[t];
        let next = m * &sigma_t[t] * m.transpose() + &spec.noise_cov;
        if !linalg::all_finite(&next) {
            return Err(Error::Diverged(t));
        }
        sigma_t.push(linalg::symmetrize(&next));
    }
    let mut sigma_sum = DMatrix::zeros(d, d);
    for s in &sigma_t {
        sigma_sum += s;
    }

    let mut e_mats: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(n);
    let mut grads: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut e_seq = Vec::with_capacity(t_max);
        let mut g_seq = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let e = &spec.r_mats[i][t] * &policy.gains[i][t]
                - spec.b_mats[i][t].transpose() * &p_k[i][t + 1] * &closed[t];
            g_seq.push(&e * &sigma_t[t] * 2.0);
            e_seq.push(e);
        }
        e_mats.push(e_seq);
        grads.push(g_seq);
    }

    let sigma0 = &sigma_t[0];
    let costs: Vec<f64> = (0..n)
        .map(|i| (sigma0 * &p_k[i][0]).trace() + n_k[i][0])
        .collect();

    Ok(PolicyEvaluation { p_k, n_k, sigma_t, sigma_sum, e_mats, grads, costs })
}

/// Natural gradient `grad_{K_t^i} C^i (Sigma_t)^{-1}`, returned as
/// `2 E_{t,i}` without forming the inverse.
pub fn natural_gradient(
    spec: &GameSpec,
    evaluation: &PolicyEvaluation,
    i: usize,
    t: usize,
) -> Result<DMatrix<f64>> {
    if i >= spec.num_players {
        return Err(Error::PlayerOutOfRange { player: i, num_players: spec.num_players });
    }
    if t >= spec.horizon {
        return Err(Error::TimeOutOfRange { t, horizon: spec.horizon });
    }
    if linalg::sym_eig_min(&evaluation.sigma_t[t]) < 1e-12 {
        return Err(Error::SingularCovariance(t));
    }
    Ok(&evaluation.e_mats[i][t] * 2.0)
}

/// Both sides of the exact cost-difference identity for a unilateral
/// deviation of player `i` from `policy` to `policy_prime_i`:
/// the left side is `C^i(K^{i'}, K^{-i}) - C^i(K)`; the right side expands
/// it through the deviated-policy second moments, the curvature
/// `G_t = R_t^i + (B_t^i)' P_{t+1,i} B_t^i` and the stationarity matrices of
/// the base policy. Callers typically assert `|lhs - rhs| <= 1e-8 (1+|lhs|)`.
pub fn smoothness_identity(
    spec: &GameSpec,
    policy: &JointPolicy,
    policy_prime_i: &[DMatrix<f64>],
    i: usize,
) -> Result<(f64, f64)> {
    if i >= spec.num_players {
        return Err(Error::PlayerOutOfRange { player: i, num_players: spec.num_players });
    }
    let base = evaluate(spec, policy)?;
    let deviated_policy = policy.with_player(i, policy_prime_i.to_vec());
    let deviated = evaluate(spec, &deviated_policy)?;

    let lhs = deviated.costs[i] - base.costs[i];
    let mut rhs = 0.0;
    for t in 0..spec.horizon {
        let delta = &policy_prime_i[t] - &policy.gains[i][t];
        let b = &spec.b_mats[i][t];
        let g = &spec.r_mats[i][t] + b.transpose() * &base.p_k[i][t + 1] * b;
        let sigma_dev = &deviated.sigma_t[t];
        rhs += (sigma_dev * delta.transpose() * &g * &delta).trace()
            + 2.0 * (sigma_dev * delta.transpose() * &base.e_mats[i][t]).trace();
    }
    Ok((lhs, rhs))
}

/// Central finite differences of `C^i` with respect to the entries of
/// `K_t^i`; the independent oracle for the analytic gradients.
pub fn finite_difference_gradient(
    spec: &GameSpec,
    policy: &JointPolicy,
    i: usize,
    t: usize,
    h: f64,
) -> Result<DMatrix<f64>> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    if i >= spec.num_players {
        return Err(Error::PlayerOutOfRange { player: i, num_players: spec.num_players });
    }
    if t >= spec.horizon {
        return Err(Error::TimeOutOfRange { t, horizon: spec.horizon });
    }
    let (rows, cols) = policy.gains[i][t].shape();
    let mut grad = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut plus = policy.clone();
            plus.gains[i][t][(r, c)] += h;
            let mut minus = policy.clone();
            minus.gains[i][t][(r, c)] -= h;
            let cost_plus = evaluate(spec, &plus)?.costs[i];
            let cost_minus = evaluate(spec, &minus)?.costs[i];
            grad[(r, c)] = (cost_plus - cost_minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{make_preset, PresetOverrides};
    use crate::game_model::{random_policy, random_spec};
    use crate::nash_solver::solve_nash;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g1() -> GameSpec {
        make_preset("g1", &PresetOverrides::default()).unwrap().spec
    }

    #[test]
    fn g1_zero_policy_hand_values() {
        let spec = g1();
        let eval = evaluate(&spec, &JointPolicy::zeros(&spec)).unwrap();
        for i in 0..2 {
            assert!((eval.p_k[i][0][(0, 0)] - 2.0).abs() < 1e-12);
            assert!((eval.n_k[i][0] - 1.0).abs() < 1e-12);
            assert!((eval.costs[i] - 3.0).abs() < 1e-12);
            assert!((eval.e_mats[i][0][(0, 0)] + 1.0).abs() < 1e-12);
            assert!((eval.grads[i][0][(0, 0)] + 2.0).abs() < 1e-12);
        }
        assert!((eval.sigma_t[0][(0, 0)] - 1.0).abs() < 1e-12);
        assert!((eval.sigma_t[1][(0, 0)] - 2.0).abs() < 1e-12);
        assert!((eval.sigma_sum[(0, 0)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn g1_at_equilibrium_is_stationary() {
        let spec = g1();
        let nash = solve_nash(&spec).unwrap();
        let eval = evaluate(&spec, &nash.k_star).unwrap();
        for i in 0..2 {
            assert!((eval.costs[i] - 20.0 / 9.0).abs() < 1e-12);
            assert!(eval.max_e_norm(i) <= 1e-12);
        }
    }

    #[test]
    fn natural_gradient_values() {
        let spec = g1();
        let eval = evaluate(&spec, &JointPolicy::zeros(&spec)).unwrap();
        let ng = natural_gradient(&spec, &eval, 0, 0).unwrap();
        assert!((ng[(0, 0)] + 2.0).abs() < 1e-12);

        let nash = solve_nash(&spec).unwrap();
        let eval_star = evaluate(&spec, &nash.k_star).unwrap();
        let ng_star = natural_gradient(&spec, &eval_star, 0, 0).unwrap();
        assert!(ng_star.norm() <= 1e-12);
    }

    #[test]
    fn natural_gradient_equals_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..15 {
            let spec = random_spec(&mut rng, 2, 2, 2, 3);
            let policy = random_policy(&mut rng, &spec, 0.3);
            let eval = evaluate(&spec, &policy).unwrap();
            for t in 0..spec.horizon {
                let inv = eval.sigma_t[t].clone().try_inverse().unwrap();
                for i in 0..2 {
                    let via_inverse = &eval.grads[i][t] * &inv;
                    let ng = natural_gradient(&spec, &eval, i, t).unwrap();
                    let scale = 1.0 + ng.norm();
                    assert!((via_inverse - ng).norm() < 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn smoothness_identity_trivial_and_hand_case() {
        let spec = g1();
        let zero = JointPolicy::zeros(&spec);
        let (lhs, rhs) = smoothness_identity(&spec, &zero, &zero.gains[0], 0).unwrap();
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);

        // Deviating player 1 from 0 to 0.2: cost drops from 3 to 2.68.
        let prime = vec![DMatrix::from_element(1, 1, 0.2)];
        let (lhs, rhs) = smoothness_identity(&spec, &zero, &prime, 0).unwrap();
        assert!((lhs + 0.32).abs() < 1e-12);
        assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()));
    }

    #[test]
    fn smoothness_identity_random_deviations() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..100 {
            let spec = random_spec(&mut rng, 2, 2, 2, 3);
            let policy = random_policy(&mut rng, &spec, 0.3);
            let i = rng.random_range(0..2);
            let deviated = random_policy(&mut rng, &spec, 0.3);
            let (lhs, rhs) =
                smoothness_identity(&spec, &policy, &deviated.gains[i], i).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()),
                "identity violated: lhs={lhs}, rhs={rhs}"
            );
        }
    }

    #[test]
    fn finite_difference_matches_analytic_on_g1() {
        let spec = g1();
        let zero = JointPolicy::zeros(&spec);
        let fd = finite_difference_gradient(&spec, &zero, 0, 0, 1e-5).unwrap();
        assert!((fd[(0, 0)] + 2.0).abs() < 1e-6);

        let nash = solve_nash(&spec).unwrap();
        let fd_star = finite_difference_gradient(&spec, &nash.k_star, 0, 0, 1e-5).unwrap();
        assert!(fd_star.norm() < 1e-6);
    }

    #[test]
    fn evaluate_costs_are_positive_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let spec = random_spec(&mut rng, 2, 3, 2, 4);
            let policy = random_policy(&mut rng, &spec, 0.4);
            let eval = evaluate(&spec, &policy).unwrap();
            let consts = crate::game_model::model_constants(&spec).unwrap();
            for i in 0..2 {
                assert!(eval.costs[i] > 0.0);
                // ||P_{t,i}|| <= C^i / sigma_x and ||Sigma_K|| <= C^i / sigma_q.
                for t in 0..=spec.horizon {
                    assert!(
                        linalg::spectral_norm(&eval.p_k[i][t])
                            <= eval.costs[i] / consts.sigma_x + 1e-9
                    );
                }
                assert!(
                    linalg::spectral_norm(&eval.sigma_sum)
                        <= eval.costs[i] / consts.sigma_q_min + 1e-9
                );
            }
        }
    }

    #[test]
    fn diverging_policy_reports_time_index() {
        let spec = g1();
        let huge = JointPolicy {
            gains: vec![
                vec![DMatrix::from_element(1, 1, 1e200)],
                vec![DMatrix::from_element(1, 1, -1e200)],
            ],
        };
        // Finite here (T=1 keeps products bounded), so force a longer horizon.
        let mut long = spec.clone();
        long.horizon = 6;
        long.a_mats = vec![long.a_mats[0].clone(); 6];
        for i in 0..2 {
            long.b_mats[i] = vec![long.b_mats[i][0].clone(); 6];
            long.q_mats[i] = vec![long.q_mats[i][0].clone(); 7];
            long.r_mats[i] = vec![long.r_mats[i][0].clone(); 6];
        }
        let huge_long = JointPolicy {
            gains: vec![vec![huge.gains[0][0].clone(); 6], vec![huge.gains[1][0].clone(); 6]],
        };
        match evaluate(&long, &huge_long) {
            Err(Error::Diverged(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
