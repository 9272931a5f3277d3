//! Model-based natural policy gradient with simultaneous player updates,
//! plus the step-size bounds, noise condition, and iteration bound that
//! govern its guaranteed linear convergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{closed_loop, model_constants, GameSpec, JointPolicy};
use crate::linalg;
use crate::nash_solver::NashSolution;
use crate::policy_eval::{evaluate, PolicyEvaluation};

/// Default regularizer added inside the closed-loop radius floor
/// `max(radius, 1 + delta)`; only the conservatism of the theoretical
/// checks depends on it, never the algorithm itself.
pub const DEFAULT_DELTA: f64 = 0.01;

/// A run is declared diverged once the summed cost exceeds this multiple of
/// the summed initial cost (or turns non-finite).
pub const DIVERGENCE_FACTOR: f64 = 1e8;

/// Terminal status of a gradient run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
}

/// Per-iteration observables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Exact per-player costs `C^i` at this iterate.
    pub costs: Vec<f64>,
    /// `(C^i - C^i*) / C^i*` when a Nash solution is supplied.
    pub normalized_errors: Option<Vec<f64>>,
    /// Per-player `max_t ||E_{t,i}||`.
    pub max_e_norms: Vec<f64>,
}

/// Full record of a gradient run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpgTrace {
    pub records: Vec<IterationRecord>,
    /// Policy snapshots `(iteration, policy)` when requested.
    pub snapshots: Vec<(usize, JointPolicy)>,
    pub status: RunStatus,
    pub final_policy: JointPolicy,
}

impl NpgTrace {
    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("trace has at least the initial record")
    }

    /// First iteration at which every player's normalized error is below
    /// `threshold`, if any.
    pub fn first_iter_below(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find_map(|r| {
            r.normalized_errors
                .as_ref()
                .filter(|errs| errs.iter().all(|e| *e < threshold))
                .map(|_| r.iter)
        })
    }
}

/// Options for [`run_npg`] and the sampled variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpgOptions {
    /// Step size per player (a single entry is shared by everyone).
    pub etas: Vec<f64>,
    /// Number of update steps.
    pub max_iters: usize,
    /// Convergence tolerance: with a Nash reference, on the summed
    /// normalized errors; otherwise on `max_{i,t} ||E_{t,i}||`.
    pub tol: f64,
    /// Keep a policy snapshot every this many iterations.
    pub snapshot_every: Option<usize>,
}

impl NpgOptions {
    pub fn uniform(eta: f64, max_iters: usize, tol: f64) -> Self {
        NpgOptions { etas: vec![eta], max_iters, tol, snapshot_every: None }
    }

    fn eta_for(&self, player: usize) -> f64 {
        if self.etas.len() == 1 {
            self.etas[0]
        } else {
            self.etas[player]
        }
    }

    fn check(&self, spec: &GameSpec) -> Result<()> {
        if self.etas.is_empty() || (self.etas.len() != 1 && self.etas.len() != spec.num_players)
        {
            return Err(Error::InvalidArgument(format!(
                "expected 1 or {} step sizes, got {}",
                spec.num_players,
                self.etas.len()
            )));
        }
        if self.etas.iter().any(|&e| e <= 0.0) {
            return Err(Error::InvalidArgument("step sizes must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// `K_t^i <- K_t^i - 2 eta_i E_{t,i}`, all players and times at once, with
/// every `E` taken from the same evaluation of the current joint policy.
fn apply_step(policy: &JointPolicy, eval: &PolicyEvaluation, opts: &NpgOptions) -> JointPolicy {
    let gains = policy
        .gains
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            let eta = opts.eta_for(i);
            seq.iter()
                .enumerate()
                .map(|(t, k)| k - &eval.e_mats[i][t] * (2.0 * eta))
                .collect()
        })
        .collect();
    JointPolicy { gains }
}

/// One natural-gradient step with a shared step size. The update is
/// simultaneous: every `E_{t,i}` is computed at the current joint policy
/// before any gain moves.
pub fn npg_step(spec: &GameSpec, policy: &JointPolicy, eta: f64) -> Result<JointPolicy> {
    npg_step_per_player(spec, policy, &[eta])
}

/// [`npg_step`] with one step size per player.
pub fn npg_step_per_player(
    spec: &GameSpec,
    policy: &JointPolicy,
    etas: &[f64],
) -> Result<JointPolicy> {
    let opts = NpgOptions { etas: etas.to_vec(), max_iters: 1, tol: 0.0, snapshot_every: None };
    opts.check(spec)?;
    let eval = evaluate(spec, policy)?;
    Ok(apply_step(policy, &eval, &opts))
}

/// Shared iteration driver: evaluates, records, checks the stopping rules,
/// then delegates the policy update to `step`.
pub(crate) fn drive_run<F>(
    spec: &GameSpec,
    init_policy: &JointPolicy,
    opts: &NpgOptions,
    nash: Option<&NashSolution>,
    mut step: F,
) -> Result<NpgTrace>
where
    F: FnMut(&JointPolicy, &PolicyEvaluation, usize) -> Result<JointPolicy>,
{
    opts.check(spec)?;
    let mut policy = init_policy.clone();
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut init_total = f64::NAN;
    let status;

    let mut iter = 0usize;
    loop {
        let eval = match evaluate(spec, &policy) {
            Ok(eval) => eval,
            Err(Error::Diverged(_)) => {
                status = RunStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let total: f64 = eval.costs.iter().sum();
        if iter == 0 {
            init_total = total;
        }

        let normalized_errors = nash.map(|n| {
            eval.costs
                .iter()
                .zip(&n.eq_costs)
                .map(|(c, c_star)| (c - c_star) / c_star)
                .collect::<Vec<f64>>()
        });
        let max_e_norms: Vec<f64> =
            (0..spec.num_players).map(|i| eval.max_e_norm(i)).collect();
        records.push(IterationRecord {
            iter,
            costs: eval.costs.clone(),
            normalized_errors: normalized_errors.clone(),
            max_e_norms: max_e_norms.clone(),
        });
        if let Some(every) = opts.snapshot_every {
            if every > 0 && iter % every == 0 {
                snapshots.push((iter, policy.clone()));
            }
        }

        if !total.is_finite() || total > DIVERGENCE_FACTOR * init_total {
            status = RunStatus::Diverged;
            break;
        }
        // Off-equilibrium a player's cost can sit below its own equilibrium
        // cost, so the gaps are summed in absolute value.
        let converged = match &normalized_errors {
            Some(errs) => errs.iter().map(|e| e.abs()).sum::<f64>() <= opts.tol,
            None => max_e_norms.iter().cloned().fold(0.0_f64, f64::max) <= opts.tol,
        };
        if converged {
            status = RunStatus::Converged;
            break;
        }
        if iter == opts.max_iters {
            status = RunStatus::MaxIters;
            break;
        }

        policy = step(&policy, &eval, iter)?;
        iter += 1;
    }

    if let Some(every) = opts.snapshot_every {
        if every > 0 && snapshots.last().map(|(m, _)| *m) != Some(iter.min(opts.max_iters)) {
            snapshots.push((iter.min(opts.max_iters), policy.clone()));
        }
    }
    Ok(NpgTrace { records, snapshots, status, final_policy: policy })
}

/// Iterates [`npg_step`] from `init_policy`, recording costs, normalized
/// errors (when `nash` is given) and stationarity diagnostics per
/// iteration. The run stops on convergence, divergence, or after
/// `opts.max_iters` update steps.
pub fn run_npg(
    spec: &GameSpec,
    init_policy: &JointPolicy,
    opts: &NpgOptions,
    nash: Option<&NashSolution>,
) -> Result<NpgTrace> {
    drive_run(spec, init_policy, opts, nash, |policy, eval, _| {
        Ok(apply_step(policy, eval, opts))
    })
}

/// `C^i(K^i, K^{-i*}) - C^i(K*)`: player `i`'s cost when deviating to its
/// gains from `policy` while everyone else plays the equilibrium, minus the
/// equilibrium cost. Non-negative up to numerical slack.
pub fn best_response_gap(
    spec: &GameSpec,
    policy: &JointPolicy,
    nash: &NashSolution,
    i: usize,
) -> Result<f64> {
    if i >= spec.num_players {
        return Err(Error::PlayerOutOfRange { player: i, num_players: spec.num_players });
    }
    policy.check_against(spec)?;
    let mixed = nash.k_star.with_player(i, policy.gains[i].clone());
    let eval = evaluate(spec, &mixed)?;
    Ok(eval.costs[i] - nash.eq_costs[i])
}

/// Every constant entering the noise condition, the guaranteed contraction
/// rate, and the step-size bounds, evaluated at a given initial policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `max{max_t ||A_t - sum_i B_t^i K_t^{i*}||, 1 + delta}`.
    pub rho_star: f64,
    pub delta: f64,
    /// `max_i` best-response gap of the initial policy.
    pub psi: f64,
    /// `rho_star + N gamma_B sqrt(T psi / (sigma_x sigma_R)) + 1/(20 T^2)`.
    pub rho_bar: f64,
    /// Left side of the noise condition, `sigma_x^5 / ||Sigma_{K*}||`.
    pub noise_lhs: f64,
    /// Right side of the noise condition.
    pub noise_rhs: f64,
    /// Whether the noise condition `noise_lhs > noise_rhs` holds.
    pub satisfied: bool,
    /// Guaranteed contraction coefficient; positive iff `satisfied`.
    pub alpha_hat: f64,
    /// Accuracy target used for the iteration bound.
    pub epsilon: f64,
    /// `ceil(log(sum_i gap_i / epsilon) / (alpha_hat eta_bound))`; absent
    /// when `alpha_hat <= 0`.
    pub iteration_bound: Option<u64>,
    /// Step-size bounds evaluated at the initial policy.
    pub i1: f64,
    pub i2: f64,
    /// `min{i1, i2, 1/sigma_R}`.
    pub eta_bound: f64,
    /// Closed-loop radius bound at the supplied policy.
    pub rho_k: f64,
}

/// `(rho^{2T} - 1) / (rho^2 - 1)`, the geometric sum controlling how
/// closed-loop products grow over the horizon.
fn radius_series(rho: f64, t_max: usize) -> f64 {
    (rho.powi(2 * t_max as i32) - 1.0) / (rho * rho - 1.0)
}

/// Evaluates the noise condition and every related constant with the
/// default radius regularizer.
pub fn check_assumptions(
    spec: &GameSpec,
    init_policy: &JointPolicy,
    nash: &NashSolution,
    epsilon: f64,
) -> Result<AssumptionReport> {
    check_assumptions_with_delta(spec, init_policy, nash, epsilon, DEFAULT_DELTA)
}

/// [`check_assumptions`] with an explicit radius regularizer `delta`.
pub fn check_assumptions_with_delta(
    spec: &GameSpec,
    init_policy: &JointPolicy,
    nash: &NashSolution,
    epsilon: f64,
    delta: f64,
) -> Result<AssumptionReport> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    init_policy.check_against(spec)?;
    let consts = model_constants(spec)?;
    let n = spec.num_players as f64;
    let num_players = spec.num_players;
    let t_max = spec.horizon;
    let t = t_max as f64;
    let d = spec.state_dim as f64;
    let sx = consts.sigma_x;
    let sr = consts.sigma_r_min;
    let sq = consts.sigma_q_min;
    let gb = consts.gamma_b;
    let gr = consts.gamma_r;

    // Closed-loop radius at the equilibrium, floored at 1 + delta.
    let mut rho_star = 1.0 + delta;
    for step in 0..t_max {
        rho_star = rho_star
            .max(linalg::spectral_norm(&closed_loop(spec, &nash.k_star, step)?));
    }

    // Best-response costs and gaps at the initial policy.
    let mut br_costs = Vec::with_capacity(num_players);
    for i in 0..num_players {
        br_costs.push(best_response_gap(spec, init_policy, nash, i)? + nash.eq_costs[i]);
    }
    let gaps: Vec<f64> = br_costs
        .iter()
        .zip(&nash.eq_costs)
        .map(|(c, c_star)| c - c_star)
        .collect();
    let psi = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_gaps: f64 = gaps.iter().sum();
    let sum_br: f64 = br_costs.iter().sum();

    let rho_bar = rho_star + n * gb * (t * psi / (sx * sr)).sqrt() + 1.0 / (20.0 * t * t);
    let rho_k = rho_star
        + n * gb * (t * gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / (sx * sr)).sqrt()
        + 1.0 / (20.0 * t * t);

    let nash_eval = evaluate(spec, &nash.k_star)?;
    let sigma_star_norm = linalg::spectral_norm(&nash_eval.sigma_sum);
    let c_star_max = nash.eq_costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let c_star_min = nash.eq_costs.iter().cloned().fold(f64::INFINITY, f64::min);

    let series_bar = radius_series(rho_bar, t_max);
    let noise_lhs = sx.powi(5) / sigma_star_norm;
    let noise_rhs = 20.0 * (n - 1.0).powi(2) * t * t * d * gb.powi(4)
        * (c_star_max + psi).powi(4)
        / (sq * sq * sr * sr)
        * series_bar
        * series_bar;
    let satisfied = noise_lhs > noise_rhs;

    let alpha_hat = sx * sr / sigma_star_norm
        - 20.0 * (n - 1.0).powi(2) * t * t * d * gb.powi(4) * (c_star_max + psi).powi(4)
            / (sx.powi(4) * sq * sq * sr)
            * series_bar
            * series_bar;

    // Step-size bounds at the initial policy.
    let init_eval = evaluate(spec, init_policy)?;
    let grad_max = init_eval
        .grads
        .iter()
        .flat_map(|seq| seq.iter().map(linalg::spectral_norm))
        .fold(0.0_f64, f64::max);
    let w_norm = linalg::spectral_norm(&spec.noise_cov);
    let series_k = radius_series(rho_k, t_max);

    let i1_denom = 20.0 * t * rho_k * series_k * (sum_br + sq * t * w_norm) * gb * grad_max
        + sq * sx * sx
        + 4.0 * (gr * sx + gb * gb * sum_br) * sum_br;
    let i1 = sq * sx * sx / i1_denom;

    let k_max = *spec.control_dims.iter().max().expect("at least one player") as f64;
    let q_factor = 10.0 * t / ((10.0 * t - 1.0) * sq);
    let curvature = gr + gb * gb * sum_br / sx;
    let i2_num = d / (80.0 * sx) * (q_factor * c_star_min).powi(2);
    let i2_denom = k_max * (q_factor * sum_br) * curvature
        + 2.0 * d / sx * (q_factor * sum_br).powi(2) * curvature * curvature;
    let i2 = i2_num / i2_denom;

    let eta_bound = i1.min(i2).min(1.0 / sr);
    let iteration_bound = if alpha_hat > 0.0 && eta_bound > 0.0 {
        if sum_gaps <= epsilon {
            Some(0)
        } else {
            Some(((sum_gaps / epsilon).ln() / (alpha_hat * eta_bound)).ceil() as u64)
        }
    } else {
        None
    };

    Ok(AssumptionReport {
        rho_star,
        delta,
        psi,
        rho_bar,
        noise_lhs,
        noise_rhs,
        satisfied,
        alpha_hat,
        epsilon,
        iteration_bound,
        i1,
        i2,
        eta_bound,
        rho_k,
    })
}
