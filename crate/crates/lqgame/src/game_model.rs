//! Game instances, policies, validation, and model constants.
//!
//! A game is an N-player stochastic linear system over a finite horizon T:
//! the state follows `x_{t+1} = A_t x_t + sum_i B_t^i u_t^i + w_t` with
//! `w_t ~ N(0, W)`, and player `i` pays the quadratic stage costs
//! `x_t' Q_t^i x_t + (u_t^i)' R_t^i u_t^i` plus the terminal `x_T' Q_T^i x_T`.
//! Policies are linear feedback `u_t^i = -K_t^i x_t`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::serde_mat;

/// Symmetry is accepted up to this largest absolute entry of `M - M^T`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Positive definiteness requires the smallest symmetric eigenvalue to
/// exceed this threshold.
pub const PD_TOL: f64 = 1e-12;
/// Mixture probabilities must sum to one within this tolerance.
pub const MIXTURE_PROB_TOL: f64 = 1e-12;

/// Distribution of the initial state `x_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitLaw {
    /// Gaussian with the given mean and covariance.
    Gaussian {
        #[serde(with = "serde_mat::vec")]
        mean: DVector<f64>,
        #[serde(with = "serde_mat::mat")]
        cov: DMatrix<f64>,
    },
    /// Finite mixture of point masses.
    FiniteMixture(Vec<MixtureAtom>),
}

/// One point mass of a finite-mixture initial law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureAtom {
    #[serde(with = "serde_mat::vec")]
    pub point: DVector<f64>,
    pub prob: f64,
}

impl InitLaw {
    /// Dimension of the state this law lives in.
    pub fn dim(&self) -> usize {
        match self {
            InitLaw::Gaussian { mean, .. } => mean.len(),
            InitLaw::FiniteMixture(atoms) => atoms.first().map_or(0, |a| a.point.len()),
        }
    }
}

/// Second moment `E[x_0 x_0^T]` of an initial law.
///
/// Gaussian: `cov + mean mean^T`; mixture: `sum_j p_j v_j v_j^T`.
pub fn second_moment(law: &InitLaw) -> DMatrix<f64> {
    match law {
        InitLaw::Gaussian { mean, cov } => cov + mean * mean.transpose(),
        InitLaw::FiniteMixture(atoms) => {
            let d = law.dim();
            let mut m = DMatrix::zeros(d, d);
            for atom in atoms {
                m += &atom.point * atom.point.transpose() * atom.prob;
            }
            m
        }
    }
}

/// Complete description of one game instance.
///
/// Index conventions: players `i = 0..N`, times `t = 0..T` for dynamics and
/// control costs, `t = 0..=T` for state costs. All matrices are dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub num_players: usize,
    pub horizon: usize,
    pub state_dim: usize,
    /// Control dimension `k_i` per player.
    pub control_dims: Vec<usize>,
    /// `A_t`, one `d x d` matrix per `t = 0..T`.
    #[serde(with = "serde_mat::mat_list")]
    pub a_mats: Vec<DMatrix<f64>>,
    /// `B_t^i`, per player a sequence of `d x k_i` matrices.
    #[serde(with = "serde_mat::mat_list2")]
    pub b_mats: Vec<Vec<DMatrix<f64>>>,
    /// `Q_t^i`, per player `T+1` symmetric `d x d` matrices.
    #[serde(with = "serde_mat::mat_list2")]
    pub q_mats: Vec<Vec<DMatrix<f64>>>,
    /// `R_t^i`, per player `T` symmetric `k_i x k_i` matrices.
    #[serde(with = "serde_mat::mat_list2")]
    pub r_mats: Vec<Vec<DMatrix<f64>>>,
    /// Noise covariance `W` shared across time steps.
    #[serde(with = "serde_mat::mat")]
    pub noise_cov: DMatrix<f64>,
    pub init_law: InitLaw,
}

impl GameSpec {
    /// Second moment of the initial state under this spec's law.
    pub fn init_second_moment(&self) -> DMatrix<f64> {
        second_moment(&self.init_law)
    }

    /// Total control dimension `sum_i k_i`.
    pub fn total_control_dim(&self) -> usize {
        self.control_dims.iter().sum()
    }
}

/// Severity of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Breaks a hard assumption; solvers refuse the spec.
    Error,
    /// Documented deviation (deterministic noise, non-Gaussian law).
    Warning,
}

/// One violated invariant, naming the assumption breached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub assumption: String,
    pub message: String,
}

/// Outcome of [`validate_spec`]: empty iff every invariant holds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.issues.iter().any(|i| i.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Warning)
    }

    fn push(&mut self, severity: Severity, assumption: &str, message: String) {
        self.issues.push(ValidationIssue {
            severity,
            assumption: assumption.to_string(),
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "  (no issues)");
        }
        for (n, issue) in self.issues.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            let tag = match issue.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            write!(f, "  [{tag}] {}: {}", issue.assumption, issue.message)?;
        }
        Ok(())
    }
}

const ASSUMPTION_COST: &str = "cost parameters";
const ASSUMPTION_NOISE: &str = "initial state and noise";
const ASSUMPTION_DIMS: &str = "dimension consistency";

fn check_spd(
    report: &mut ValidationReport,
    m: &DMatrix<f64>,
    name: &str,
    assumption: &str,
    context: &str,
) {
    if linalg::max_asymmetry(m) > SYMMETRY_TOL {
        report.push(
            Severity::Error,
            assumption,
            format!("{name} not symmetric {context}"),
        );
        return;
    }
    let min_eig = linalg::sym_eig_min(m);
    if min_eig <= PD_TOL {
        report.push(
            Severity::Error,
            assumption,
            format!("{name} not positive definite {context} (min eigenvalue {min_eig:.3e})"),
        );
    }
}

/// Checks every model assumption and dimension constraint. Malformed specs
/// are reported, never silently repaired. A spec with only warnings (zero
/// noise covariance, non-Gaussian initial law) is still accepted by the
/// solvers; errors are not.
pub fn validate_spec(spec: &GameSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = spec.num_players;
    let d = spec.state_dim;
    let t_max = spec.horizon;

    if n == 0 || d == 0 || t_max == 0 {
        report.push(
            Severity::Error,
            ASSUMPTION_DIMS,
            format!("num_players ({n}), state_dim ({d}) and horizon ({t_max}) must be positive"),
        );
        return report;
    }
    if spec.control_dims.len() != n || spec.control_dims.iter().any(|&k| k == 0) {
        report.push(
            Severity::Error,
            ASSUMPTION_DIMS,
            format!(
                "control_dims must list one positive dimension per player, got {:?}",
                spec.control_dims
            ),
        );
        return report;
    }

    let mut dims_ok = true;
    let mut dim_issue = |report: &mut ValidationReport, msg: String| {
        report.push(Severity::Error, ASSUMPTION_DIMS, msg);
        dims_ok = false;
    };

    if spec.a_mats.len() != t_max {
        dim_issue(
            &mut report,
            format!("expected {} A matrices, got {}", t_max, spec.a_mats.len()),
        );
    } else if spec.a_mats.iter().any(|a| a.shape() != (d, d)) {
        dim_issue(&mut report, format!("every A_t must be {d}x{d}"));
    }
    if spec.b_mats.len() != n || spec.q_mats.len() != n || spec.r_mats.len() != n {
        dim_issue(
            &mut report,
            "b_mats, q_mats and r_mats must have one sequence per player".to_string(),
        );
    } else {
        for i in 0..n {
            let k = spec.control_dims[i];
            if spec.b_mats[i].len() != t_max || spec.b_mats[i].iter().any(|b| b.shape() != (d, k))
            {
                dim_issue(
                    &mut report,
                    format!("player {}: expected {} B matrices of shape {d}x{k}", i + 1, t_max),
                );
            }
            if spec.q_mats[i].len() != t_max + 1
                || spec.q_mats[i].iter().any(|q| q.shape() != (d, d))
            {
                dim_issue(
                    &mut report,
                    format!(
                        "player {}: expected {} Q matrices of shape {d}x{d}",
                        i + 1,
                        t_max + 1
                    ),
                );
            }
            if spec.r_mats[i].len() != t_max || spec.r_mats[i].iter().any(|r| r.shape() != (k, k))
            {
                dim_issue(
                    &mut report,
                    format!("player {}: expected {} R matrices of shape {k}x{k}", i + 1, t_max),
                );
            }
        }
    }
    if spec.noise_cov.shape() != (d, d) {
        dim_issue(&mut report, format!("noise covariance must be {d}x{d}"));
    }
    if spec.init_law.dim() != d {
        dim_issue(
            &mut report,
            format!("initial law dimension {} does not match state_dim {d}", spec.init_law.dim()),
        );
    }
    if !dims_ok {
        return report;
    }

    for i in 0..n {
        for (t, q) in spec.q_mats[i].iter().enumerate() {
            check_spd(&mut report, q, "Q", ASSUMPTION_COST, &format!("(player {}, t={t})", i + 1));
        }
        for (t, r) in spec.r_mats[i].iter().enumerate() {
            check_spd(&mut report, r, "R", ASSUMPTION_COST, &format!("(player {}, t={t})", i + 1));
        }
    }

    // Noise covariance: indefinite or asymmetric W is an error; a PSD but
    // singular W (e.g. sigma^2 = 0 presets) only loses the PD guarantee, so
    // it is downgraded to a deterministic-mode warning.
    let w = &spec.noise_cov;
    if linalg::max_asymmetry(w) > SYMMETRY_TOL {
        report.push(Severity::Error, ASSUMPTION_NOISE, "W not symmetric".to_string());
    } else {
        let min_eig = linalg::sym_eig_min(w);
        if min_eig < -SYMMETRY_TOL {
            report.push(
                Severity::Error,
                ASSUMPTION_NOISE,
                format!("W not positive definite (min eigenvalue {min_eig:.3e})"),
            );
        } else if min_eig <= PD_TOL {
            report.push(
                Severity::Warning,
                ASSUMPTION_NOISE,
                format!(
                    "W not positive definite (min eigenvalue {min_eig:.3e}); \
                     dynamics are effectively deterministic"
                ),
            );
        }
    }

    match &spec.init_law {
        InitLaw::Gaussian { cov, .. } => {
            if linalg::max_asymmetry(cov) > SYMMETRY_TOL {
                report.push(
                    Severity::Error,
                    ASSUMPTION_NOISE,
                    "initial covariance not symmetric".to_string(),
                );
            } else if linalg::sym_eig_min(cov) < -SYMMETRY_TOL {
                report.push(
                    Severity::Error,
                    ASSUMPTION_NOISE,
                    "initial covariance not positive semi-definite".to_string(),
                );
            }
        }
        InitLaw::FiniteMixture(atoms) => {
            report.push(
                Severity::Warning,
                ASSUMPTION_NOISE,
                "initial law is a finite mixture, not Gaussian".to_string(),
            );
            if atoms.is_empty() {
                report.push(
                    Severity::Error,
                    ASSUMPTION_NOISE,
                    "mixture must have at least one atom".to_string(),
                );
            } else {
                if atoms.iter().any(|a| a.prob < 0.0) {
                    report.push(
                        Severity::Error,
                        ASSUMPTION_NOISE,
                        "mixture probabilities must be non-negative".to_string(),
                    );
                }
                let total: f64 = atoms.iter().map(|a| a.prob).sum();
                if (total - 1.0).abs() > MIXTURE_PROB_TOL {
                    report.push(
                        Severity::Error,
                        ASSUMPTION_NOISE,
                        format!("mixture probabilities sum to {total}, expected 1"),
                    );
                }
                if atoms.iter().any(|a| a.point.len() != d) {
                    report.push(
                        Severity::Error,
                        ASSUMPTION_NOISE,
                        "mixture points must all match state_dim".to_string(),
                    );
                }
            }
        }
    }

    let sigma0 = spec.init_second_moment();
    let min_eig = linalg::sym_eig_min(&sigma0);
    if min_eig <= PD_TOL {
        report.push(
            Severity::Error,
            ASSUMPTION_NOISE,
            format!("E[x0 x0^T] not positive definite (min eigenvalue {min_eig:.3e})"),
        );
    }

    report
}

/// Validates and converts hard violations into an error.
pub(crate) fn require_valid(spec: &GameSpec) -> Result<()> {
    let report = validate_spec(spec);
    if report.has_errors() {
        Err(Error::InvalidSpec(report))
    } else {
        Ok(())
    }
}

/// A joint linear feedback policy: per player, gains `K_t^i` of shape
/// `k_i x d` for `t = 0..T`, applied as `u_t^i = -K_t^i x_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPolicy {
    #[serde(with = "serde_mat::mat_list2")]
    pub gains: Vec<Vec<DMatrix<f64>>>,
}

impl JointPolicy {
    /// All-zero gains with dimensions matching `spec`.
    pub fn zeros(spec: &GameSpec) -> Self {
        let gains = (0..spec.num_players)
            .map(|i| {
                (0..spec.horizon)
                    .map(|_| DMatrix::zeros(spec.control_dims[i], spec.state_dim))
                    .collect()
            })
            .collect();
        JointPolicy { gains }
    }

    pub fn num_players(&self) -> usize {
        self.gains.len()
    }

    /// True when shapes agree with `spec` for every player and time.
    pub fn dims_match(&self, spec: &GameSpec) -> bool {
        self.gains.len() == spec.num_players
            && self.gains.iter().enumerate().all(|(i, seq)| {
                seq.len() == spec.horizon
                    && seq
                        .iter()
                        .all(|k| k.shape() == (spec.control_dims[i], spec.state_dim))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.gains
            .iter()
            .all(|seq| seq.iter().all(linalg::all_finite))
    }

    /// Copy of `self` with player `i`'s gain sequence replaced.
    pub fn with_player(&self, i: usize, gains_i: Vec<DMatrix<f64>>) -> Self {
        let mut out = self.clone();
        out.gains[i] = gains_i;
        out
    }

    pub(crate) fn check_against(&self, spec: &GameSpec) -> Result<()> {
        if !self.dims_match(spec) {
            return Err(Error::DimensionMismatch(
                "policy gains do not match the game dimensions".into(),
            ));
        }
        Ok(())
    }
}

/// Closed-loop transition matrix `A_t - sum_i B_t^i K_t^i`.
pub fn closed_loop(spec: &GameSpec, policy: &JointPolicy, t: usize) -> Result<DMatrix<f64>> {
    if t >= spec.horizon {
        return Err(Error::TimeOutOfRange { t, horizon: spec.horizon });
    }
    policy.check_against(spec)?;
    let mut m = spec.a_mats[t].clone();
    for i in 0..spec.num_players {
        m -= &spec.b_mats[i][t] * &policy.gains[i][t];
    }
    Ok(m)
}

/// Scalar summaries of a spec used by the step-size and noise conditions:
/// the state-excitation floor `sigma_x`, the cost-curvature floors
/// `sigma_min(R)`/`sigma_min(Q)`, and the spectral ceilings of A, B, R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    /// `min{sigma_min(E[x0 x0^T]), sigma_min(W)}`, a policy-independent
    /// lower bound on every state second moment's smallest singular value.
    pub sigma_x: f64,
    /// `min_t sigma_min(R_t^i)` per player.
    pub sigma_r_per_player: Vec<f64>,
    pub sigma_r_min: f64,
    /// `min_t sigma_min(Q_t^i)` per player.
    pub sigma_q_per_player: Vec<f64>,
    pub sigma_q_min: f64,
    /// `max_t ||A_t||`.
    pub gamma_a: f64,
    /// `max_i max_t ||B_t^i||`.
    pub gamma_b: f64,
    /// `max_i max_t ||R_t^i||`.
    pub gamma_r: f64,
}

/// Computes [`ModelConstants`]. Fails when the spec has hard violations.
pub fn model_constants(spec: &GameSpec) -> Result<ModelConstants> {
    require_valid(spec)?;
    let sigma0 = spec.init_second_moment();
    let sigma_x = linalg::sym_eig_min(&sigma0).min(linalg::sym_eig_min(&spec.noise_cov));

    let sigma_r_per_player: Vec<f64> = spec
        .r_mats
        .iter()
        .map(|seq| seq.iter().map(linalg::sym_eig_min).fold(f64::INFINITY, f64::min))
        .collect();
    let sigma_q_per_player: Vec<f64> = spec
        .q_mats
        .iter()
        .map(|seq| seq.iter().map(linalg::sym_eig_min).fold(f64::INFINITY, f64::min))
        .collect();

    let max_norm = |mats: &[DMatrix<f64>]| {
        mats.iter().map(linalg::spectral_norm).fold(0.0_f64, f64::max)
    };
    let gamma_a = max_norm(&spec.a_mats);
    let gamma_b = spec.b_mats.iter().map(|seq| max_norm(seq)).fold(0.0_f64, f64::max);
    let gamma_r = spec.r_mats.iter().map(|seq| max_norm(seq)).fold(0.0_f64, f64::max);

    Ok(ModelConstants {
        sigma_x,
        sigma_r_min: sigma_r_per_player.iter().copied().fold(f64::INFINITY, f64::min),
        sigma_r_per_player,
        sigma_q_min: sigma_q_per_player.iter().copied().fold(f64::INFINITY, f64::min),
        sigma_q_per_player,
        gamma_a,
        gamma_b,
        gamma_r,
    })
}

/// Draws a random validated game instance; useful for property tests and
/// stress runs. Dynamics are rescaled to moderate spectral norms and the
/// cost matrices are built positive definite.
pub fn random_spec<R: Rng + ?Sized>(
    rng: &mut R,
    num_players: usize,
    state_dim: usize,
    max_control_dim: usize,
    horizon: usize,
) -> GameSpec {
    let d = state_dim;
    let control_dims: Vec<usize> = (0..num_players)
        .map(|_| rng.random_range(1..=max_control_dim))
        .collect();

    let gaussian_mat = |rng: &mut R, rows: usize, cols: usize| -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    };
    let scaled_to = |rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64| -> DMatrix<f64> {
        let m = gaussian_mat(rng, rows, cols);
        let norm = linalg::spectral_norm(&m).max(1e-12);
        let target = rng.random_range(lo..hi);
        m * (target / norm)
    };
    let pd_mat = |rng: &mut R, dim: usize, floor: f64| -> DMatrix<f64> {
        let g = gaussian_mat(rng, dim, dim);
        &g * g.transpose() / dim as f64 + DMatrix::identity(dim, dim) * floor
    };

    let a_mats = (0..horizon).map(|_| scaled_to(rng, d, d, 0.3, 0.95)).collect();
    let b_mats = control_dims
        .iter()
        .map(|&k| {
            (0..horizon)
                .map(|_| scaled_to(rng, d, k, 0.2, 1.0))
                .collect()
        })
        .collect();
    let q_mats = (0..num_players)
        .map(|_| (0..=horizon).map(|_| pd_mat(rng, d, 0.2)).collect())
        .collect();
    let r_mats = control_dims
        .iter()
        .map(|&k| (0..horizon).map(|_| pd_mat(rng, k, 0.2)).collect())
        .collect();
    let noise_cov = pd_mat(rng, d, 0.1) * 0.5;
    let mean = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
    let init_law = InitLaw::Gaussian { mean, cov: pd_mat(rng, d, 0.1) * 0.5 };

    GameSpec {
        num_players,
        horizon,
        state_dim: d,
        control_dims,
        a_mats,
        b_mats,
        q_mats,
        r_mats,
        noise_cov,
        init_law,
    }
}

/// Random policy with Gaussian entries of the given scale.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, spec: &GameSpec, scale: f64) -> JointPolicy {
    let gains = (0..spec.num_players)
        .map(|i| {
            (0..spec.horizon)
                .map(|_| {
                    DMatrix::from_fn(spec.control_dims[i], spec.state_dim, |_, _| {
                        rng.sample::<f64, _>(StandardNormal) * scale
                    })
                })
                .collect()
        })
        .collect();
    JointPolicy { gains }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{make_preset, PresetOverrides};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g1() -> GameSpec {
        make_preset("g1", &PresetOverrides::default()).unwrap().spec
    }

    #[test]
    fn g1_validates_clean() {
        let report = validate_spec(&g1());
        assert!(report.is_empty(), "unexpected issues: {report}");
    }

    #[test]
    fn negative_r_is_reported() {
        let mut spec = g1();
        spec.r_mats[0][0][(0, 0)] = -1.0;
        let report = validate_spec(&spec);
        assert!(report.has_errors());
        assert!(report
            .issues
            .iter()
            .any(|i| i.message.contains("R not positive definite")));
    }

    #[test]
    fn mazumdar_preset_validates_with_mixture_warning() {
        let spec = make_preset("mazumdar", &PresetOverrides::default()).unwrap().spec;
        let report = validate_spec(&spec);
        assert!(!report.has_errors(), "unexpected errors: {report}");
        // Two-point initial law: warned, not rejected.
        assert!(report.warnings().count() >= 1);
    }

    #[test]
    fn sigma2_zero_downgrades_w_to_warning() {
        let spec = make_preset("mazumdar", &PresetOverrides { sigma2: Some(0.0), ..Default::default() })
            .unwrap()
            .spec;
        let report = validate_spec(&spec);
        assert!(!report.has_errors(), "unexpected errors: {report}");
        assert!(report
            .warnings()
            .any(|i| i.message.contains("W not positive definite")));
    }

    #[test]
    fn second_moment_gaussian_zero_mean() {
        let law = InitLaw::Gaussian { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2) };
        assert_eq!(second_moment(&law), DMatrix::identity(2, 2));
    }

    #[test]
    fn second_moment_gaussian_rank_one_update() {
        let law = InitLaw::Gaussian {
            mean: DVector::from_vec(vec![1.0, 0.0]),
            cov: DMatrix::identity(2, 2),
        };
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert_eq!(second_moment(&law), expected);
    }

    #[test]
    fn second_moment_two_point_mixture() {
        let law = InitLaw::FiniteMixture(vec![
            MixtureAtom { point: DVector::from_vec(vec![1.0, 1.0]), prob: 0.5 },
            MixtureAtom { point: DVector::from_vec(vec![1.0, 1.1]), prob: 0.5 },
        ]);
        let m = second_moment(&law);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.05, 1.05, 1.105]);
        assert!((m - expected).norm() < 1e-12);
        assert!(linalg::sym_eig_min(&second_moment(&law)) > 0.0);
    }

    #[test]
    fn g1_model_constants_all_one() {
        let c = model_constants(&g1()).unwrap();
        assert!((c.sigma_x - 1.0).abs() < 1e-12);
        assert!((c.sigma_r_min - 1.0).abs() < 1e-12);
        assert!((c.sigma_q_min - 1.0).abs() < 1e-12);
        assert!((c.gamma_a - 1.0).abs() < 1e-12);
        assert!((c.gamma_b - 1.0).abs() < 1e-12);
        assert!((c.gamma_r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_x_takes_min_of_noise_and_initial_moment() {
        let mut spec = g1();
        spec.noise_cov = DMatrix::from_element(1, 1, 2.0);
        let c = model_constants(&spec).unwrap();
        assert!((c.sigma_x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn remark31_gammas() {
        let spec = make_preset("remark31", &PresetOverrides::default()).unwrap().spec;
        let c = model_constants(&spec).unwrap();
        assert!((c.gamma_a - 0.2).abs() < 1e-12);
        assert!((c.gamma_b - 0.1).abs() < 1e-12);
        assert!((c.gamma_r - 0.3).abs() < 1e-12);
    }

    #[test]
    fn closed_loop_values_on_g1() {
        let spec = g1();
        // Nash gains 1/3 each: 1 - 1/3 - 1/3 = 1/3.
        let third = DMatrix::from_element(1, 1, 1.0 / 3.0);
        let k_star = JointPolicy { gains: vec![vec![third.clone()], vec![third.clone()]] };
        let m = closed_loop(&spec, &k_star, 0).unwrap();
        assert!((m[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);

        let zero = JointPolicy::zeros(&spec);
        assert_eq!(closed_loop(&spec, &zero, 0).unwrap()[(0, 0)], 1.0);

        let one_zero = JointPolicy {
            gains: vec![vec![DMatrix::from_element(1, 1, 1.0)], vec![DMatrix::zeros(1, 1)]],
        };
        assert_eq!(closed_loop(&spec, &one_zero, 0).unwrap()[(0, 0)], 0.0);

        assert!(matches!(
            closed_loop(&spec, &zero, 1),
            Err(Error::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn scaling_noise_never_decreases_sigma_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let spec = random_spec(&mut rng, 2, 3, 2, 3);
            let base = model_constants(&spec).unwrap().sigma_x;
            let mut scaled = spec.clone();
            scaled.noise_cov *= 3.0;
            let up = model_constants(&scaled).unwrap().sigma_x;
            assert!(up >= base - 1e-12);
        }
    }

    #[test]
    fn random_specs_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let n = rng.random_range(1..=3);
            let d = rng.random_range(1..=3);
            let t = rng.random_range(1..=5);
            let spec = random_spec(&mut rng, n, d, 2, t);
            let report = validate_spec(&spec);
            assert!(!report.has_errors(), "{report}");
        }
    }
}
