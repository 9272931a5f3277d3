//! Command-line surface: game/policy JSON I/O, CSV trace emission, and the
//! `nash` / `eval` / `npg` / `npg-free` / `check` / `preset` subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{make_preset, ExperimentPreset, InitRule, PresetOverrides};
use crate::game_model::{validate_spec, GameSpec, JointPolicy};
use crate::nash_solver::{solve_nash, NashSolution};
use crate::npg::{check_assumptions, run_npg, NpgOptions, NpgTrace, RunStatus};
use crate::policy_eval::evaluate;
use crate::zeroth_order::{run_npg_free, ZoConfig};

/// Environment variable capping the rayon thread count; results are
/// schedule-independent, so this only affects wall-clock time.
pub const THREADS_ENV: &str = "LQGAME_THREADS";

#[derive(Parser)]
#[command(
    name = "lqgame",
    about = "N-player linear-quadratic games: exact Nash solutions, policy \
             evaluation, and natural policy gradient runs",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct GameArgs {
    /// Game configuration JSON file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in preset name: g1 | mazumdar | synthetic | remark31.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Replace the noise covariance by sigma2 * I.
    #[arg(long, value_name = "F")]
    sigma2: Option<f64>,
}

#[derive(Args)]
struct PolicyArgs {
    /// Policy JSON file.
    #[arg(long, value_name = "PATH")]
    policy: Option<PathBuf>,
    /// Initialize uniformly from a ball of this radius around the
    /// equilibrium gains.
    #[arg(long, value_name = "R")]
    radius: Option<f64>,
    /// Seed for ball initialization and sampled runs.
    #[arg(long, value_name = "S", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// Shared step size.
    #[arg(long, value_name = "F")]
    eta: Option<f64>,
    /// Comma-separated per-player step sizes.
    #[arg(long, value_name = "F,F,...", value_delimiter = ',')]
    eta_per_player: Option<Vec<f64>>,
    /// Number of gradient iterations.
    #[arg(long, value_name = "N")]
    iters: Option<usize>,
    /// Convergence tolerance on the summed normalized error.
    #[arg(long, value_name = "F")]
    tol: Option<f64>,
    /// Keep a policy snapshot every N iterations (written next to --out).
    #[arg(long, value_name = "N")]
    snapshot_every: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the coupled backward recursion for the equilibrium.
    Nash {
        #[command(flatten)]
        game: GameArgs,
        /// Output JSON path (stdout when omitted).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Evaluate a policy exactly: values, covariances, gradients, costs.
    Eval {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Model-based natural policy gradient run; emits a CSV trace.
    Npg {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Sample-based natural policy gradient run; emits a CSV trace.
    NpgFree {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Rollouts per player per iteration.
        #[arg(long, value_name = "L")]
        rollouts: Option<usize>,
        /// Perturbation radius.
        #[arg(long, value_name = "R")]
        smoothing: Option<f64>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Evaluate the noise condition, step-size bounds, and iteration bound.
    Check {
        #[command(flatten)]
        game: GameArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Accuracy target for the iteration bound.
        #[arg(long, value_name = "F", default_value_t = 1e-6)]
        epsilon: f64,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Emit a preset's game configuration as JSON.
    Preset {
        /// Preset name: g1 | mazumdar | synthetic | remark31.
        #[arg(long, value_name = "NAME")]
        preset: String,
        #[arg(long, value_name = "F")]
        sigma2: Option<f64>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

/// Reads a game configuration from JSON.
pub fn load_spec(path: &Path) -> Result<GameSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("parsing {}: {e}", path.display())))
}

/// Reads a policy from JSON.
pub fn load_policy(path: &Path) -> Result<JointPolicy> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("parsing {}: {e}", path.display())))
}

fn write_output<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serializing output: {e}")))?;
    match out {
        Some(path) => fs::write(path, json.as_bytes())
            .map_err(|e| Error::Config(format!("writing {}: {e}", path.display()))),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

/// Renders a run trace in the fixed long CSV schema, one row per
/// `(iteration, player)`; identical runs produce byte-identical text.
pub fn trace_to_csv(trace: &NpgTrace) -> String {
    let mut out = String::from("iter,player,cost,normalized_error,max_E_norm\n");
    for rec in &trace.records {
        for (i, cost) in rec.costs.iter().enumerate() {
            let err = match &rec.normalized_errors {
                Some(errs) => format!("{}", errs[i]),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                rec.iter,
                i + 1,
                cost,
                err,
                rec.max_e_norms[i]
            ));
        }
    }
    out
}

fn write_trace(trace: &NpgTrace, out: Option<&Path>, snapshots: bool) -> Result<()> {
    let csv = trace_to_csv(trace);
    match out {
        Some(path) => {
            fs::write(path, csv.as_bytes())
                .map_err(|e| Error::Config(format!("writing {}: {e}", path.display())))?;
            if snapshots {
                let sidecar = path.with_extension("snapshots.json");
                write_output(&trace.snapshots, Some(&sidecar))?;
            }
        }
        None => {
            print!("{csv}");
            if snapshots {
                write_output(&trace.snapshots, None)?;
            }
        }
    }
    Ok(())
}

struct ResolvedGame {
    spec: GameSpec,
    preset: Option<ExperimentPreset>,
}

fn resolve_game(args: &GameArgs) -> Result<ResolvedGame> {
    let (spec, preset) = match (&args.config, &args.preset) {
        (Some(path), None) => {
            let mut spec = load_spec(path)?;
            if let Some(s2) = args.sigma2 {
                let d = spec.state_dim;
                spec.noise_cov = nalgebra::DMatrix::identity(d, d) * s2;
            }
            (spec, None)
        }
        (None, Some(name)) => {
            let preset = make_preset(
                name,
                &PresetOverrides { sigma2: args.sigma2, ..Default::default() },
            )?;
            (preset.spec.clone(), Some(preset))
        }
        _ => {
            return Err(Error::Config(
                "exactly one of --config or --preset is required".into(),
            ))
        }
    };

    let report = validate_spec(&spec);
    for warning in report.warnings() {
        eprintln!("warning: {}: {}", warning.assumption, warning.message);
    }
    if report.has_errors() {
        return Err(Error::InvalidSpec(report));
    }
    Ok(ResolvedGame { spec, preset })
}

fn resolve_policy(
    game: &ResolvedGame,
    args: &PolicyArgs,
    nash: Option<&NashSolution>,
) -> Result<JointPolicy> {
    if let Some(path) = &args.policy {
        let policy = load_policy(path)?;
        policy.check_against(&game.spec)?;
        return Ok(policy);
    }
    if let Some(radius) = args.radius {
        let nash = nash.ok_or_else(|| {
            Error::InvalidArgument("--radius initialization requires the equilibrium".into())
        })?;
        return Ok(crate::experiments::init_ball(nash, radius, args.seed));
    }
    if let Some(preset) = &game.preset {
        let init = match &preset.init {
            InitRule::Ball { radius, .. } => {
                // CLI seed wins over the preset's stored seed.
                InitRule::Ball { radius: *radius, seed: args.seed }
            }
            explicit => explicit.clone(),
        };
        return ExperimentPreset { init, ..preset.clone() }.resolve_init(nash);
    }
    Err(Error::Config(
        "a policy is required: pass --policy PATH or --radius R (with --seed)".into(),
    ))
}

fn run_options(preset: Option<&ExperimentPreset>, run: &RunArgs) -> Result<NpgOptions> {
    let defaults = preset.map(|p| p.settings.clone());
    let etas = if let Some(per_player) = &run.eta_per_player {
        per_player.clone()
    } else if let Some(eta) = run.eta {
        vec![eta]
    } else if let Some(d) = &defaults {
        d.etas.clone()
    } else {
        return Err(Error::Config("--eta or --eta-per-player is required".into()));
    };
    let max_iters = run
        .iters
        .or_else(|| defaults.as_ref().map(|d| d.max_iters))
        .ok_or_else(|| Error::Config("--iters is required".into()))?;
    let tol = run.tol.or_else(|| defaults.as_ref().map(|d| d.tol)).unwrap_or(1e-8);
    Ok(NpgOptions { etas, max_iters, tol, snapshot_every: run.snapshot_every })
}

fn status_exit(status: RunStatus) -> i32 {
    if status == RunStatus::Diverged {
        3
    } else {
        0
    }
}

fn dispatch(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Nash { game, out } => {
            let game = resolve_game(&game)?;
            let nash = solve_nash(&game.spec)?;
            write_output(&nash, out.as_deref())?;
            Ok(0)
        }
        Cmd::Eval { game, policy, out } => {
            let game = resolve_game(&game)?;
            let needs_nash = policy.radius.is_some()
                || matches!(
                    game.preset.as_ref().map(|p| &p.init),
                    Some(InitRule::Ball { .. })
                );
            let nash = if needs_nash { Some(solve_nash(&game.spec)?) } else { None };
            let pol = resolve_policy(&game, &policy, nash.as_ref())?;
            let evaluation = evaluate(&game.spec, &pol)?;
            write_output(&evaluation, out.as_deref())?;
            Ok(0)
        }
        Cmd::Npg { game, policy, run, out } => {
            let game = resolve_game(&game)?;
            let nash = solve_nash(&game.spec)?;
            let init = resolve_policy(&game, &policy, Some(&nash))?;
            let opts = run_options(game.preset.as_ref(), &run)?;
            let trace = run_npg(&game.spec, &init, &opts, Some(&nash))?;
            write_trace(&trace, out.as_deref(), opts.snapshot_every.is_some())?;
            Ok(status_exit(trace.status))
        }
        Cmd::NpgFree { game, policy, run, rollouts, smoothing, out } => {
            let game = resolve_game(&game)?;
            let nash = solve_nash(&game.spec)?;
            let init = resolve_policy(&game, &policy, Some(&nash))?;
            let opts = run_options(game.preset.as_ref(), &run)?;
            let defaults = game.preset.as_ref().map(|p| p.settings.clone());
            let num_traj = rollouts
                .or_else(|| defaults.as_ref().map(|d| d.num_traj))
                .ok_or_else(|| Error::Config("--rollouts is required".into()))?;
            let radius = smoothing
                .or_else(|| defaults.as_ref().map(|d| d.smoothing))
                .ok_or_else(|| Error::Config("--smoothing is required".into()))?;
            let cfg = ZoConfig::new(num_traj, radius, policy.seed);
            let trace = run_npg_free(&game.spec, &init, &opts, &cfg, Some(&nash))?;
            write_trace(&trace, out.as_deref(), opts.snapshot_every.is_some())?;
            Ok(status_exit(trace.status))
        }
        Cmd::Check { game, policy, epsilon, out } => {
            let game = resolve_game(&game)?;
            let nash = solve_nash(&game.spec)?;
            let init = resolve_policy(&game, &policy, Some(&nash))?;
            let report = check_assumptions(&game.spec, &init, &nash, epsilon)?;
            write_output(&report, out.as_deref())?;
            eprintln!("satisfied={}", report.satisfied);
            Ok(0)
        }
        Cmd::Preset { preset, sigma2, out } => {
            let preset =
                make_preset(&preset, &PresetOverrides { sigma2, ..Default::default() })?;
            write_output(&preset.spec, out.as_deref())?;
            Ok(0)
        }
    }
}

/// Parses `argv` (including the program name) and runs one subcommand.
/// Exit codes: 0 success, 1 validation/configuration error, 2 solver
/// error, 3 divergence.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    if let Ok(threads) = std::env::var(THREADS_ENV) {
        if let Ok(n) = threads.trim().parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }

    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            let _ = std::io::stdout().flush();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
