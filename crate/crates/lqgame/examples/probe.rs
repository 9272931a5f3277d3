// Temporary empirical probe for the experiment grids. Deleted before ship.

use lqgame::*;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());

    if which == "remark31" || which == "all" {
        let preset = make_preset("remark31", &PresetOverrides::default()).unwrap();
        let nash = solve_nash(&preset.spec).unwrap();
        let init = preset.explicit_init().unwrap();
        let report = check_assumptions(&preset.spec, &init, &nash, 1e-6).unwrap();
        println!("remark31 report: {:#?}", report);

        // Variant with stiffer control penalty: candidate satisfied instance.
        for r in [0.6, 0.9, 1.2] {
            let mut spec = preset.spec.clone();
            for i in 0..2 {
                for t in 0..spec.horizon {
                    spec.r_mats[i][t][(0, 0)] = r;
                }
            }
            let nash2 = solve_nash(&spec).unwrap();
            let rep = check_assumptions(&spec, &init, &nash2, 1e-6).unwrap();
            println!(
                "remark31 R={r}: satisfied={} alpha_hat={:.5} eta_bound={:.6} (i1={:.5}, i2={:.5}, 1/sR={:.3}) M(1e-6)={:?} lhs={:.3e} rhs={:.3e}",
                rep.satisfied, rep.alpha_hat, rep.eta_bound, rep.i1, rep.i2, 1.0/ r, rep.iteration_bound, rep.noise_lhs, rep.noise_rhs
            );
        }
    }

    if which == "mazumdar" || which == "all" {
        for sigma2 in [0.0, 1.0, 10.0] {
            for seed in 0..20u64 {
                let preset = make_preset(
                    "mazumdar",
                    &PresetOverrides { sigma2: Some(sigma2), ..Default::default() },
                )
                .unwrap();
                let nash = solve_nash(&preset.spec).unwrap();
                let init = init_ball(&nash, 0.25, seed);
                let opts = NpgOptions::uniform(0.1, 5000, 1e-10);
                let trace = run_npg(&preset.spec, &init, &opts, Some(&nash)).unwrap();
                let below = trace.first_iter_below(0.005);
                let last = trace.records.last().unwrap();
                println!(
                    "mazumdar s2={sigma2} seed={seed}: status={:?} first<0.5%={:?} final_iter={} final_err={:?}",
                    trace.status, below, last.iter,
                    last.normalized_errors.as_ref().map(|e| e.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>())
                );
            }
        }
    }

    if which == "diverge" || which == "all" {
        // (r, etas, label)
        let configs: Vec<(f64, Vec<f64>, &str)> = vec![
            (0.42, vec![0.001], "A: r=0.42 eta=0.001"),
            (0.42, vec![0.001, 0.01], "B: r=0.42 eta=(0.001,0.01)"),
            (0.16, vec![0.001], "C: r=0.16 eta=0.001"),
        ];
        for (r, etas, label) in configs {
            let mut fail = 0;
            let mut conv = 0;
            for seed in 0..24u64 {
                let preset = make_preset(
                    "mazumdar",
                    &PresetOverrides { sigma2: Some(0.0), ..Default::default() },
                )
                .unwrap();
                let nash = solve_nash(&preset.spec).unwrap();
                let init = init_ball(&nash, r, seed);
                let opts = NpgOptions {
                    etas: etas.clone(),
                    max_iters: 10000,
                    tol: 1e-12,
                    snapshot_every: None,
                };
                let trace = run_npg(&preset.spec, &init, &opts, Some(&nash)).unwrap();
                let last = trace.records.last().unwrap();
                let max_err = last
                    .normalized_errors
                    .as_ref()
                    .map(|e| e.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    .unwrap_or(f64::NAN);
                let failed = trace.status == RunStatus::Diverged || max_err > 1.0;
                if failed {
                    fail += 1;
                }
                if max_err < 0.05 && trace.status != RunStatus::Diverged {
                    conv += 1;
                }
                println!(
                    "{label} seed={seed}: status={:?} final_iter={} max_final_err={max_err:.3e}",
                    trace.status, last.iter
                );
            }
            println!("{label}: failed(div or >100%)={fail}/24 converged(<5%)={conv}/24");
        }
    }

    if which == "traj" {
        let preset = make_preset(
            "synthetic",
            &PresetOverrides { sigma2: Some(0.1), ..Default::default() },
        )
        .unwrap();
        let nash = solve_nash(&preset.spec).unwrap();
        let init = preset.explicit_init().unwrap();
        for seed in [1u64, 3, 7] {
            let opts = NpgOptions { etas: vec![0.0005], max_iters: 600, tol: 1e-12, snapshot_every: None };
            let cfg = ZoConfig::new(200, 0.5, seed);
            let trace = run_npg_free(&preset.spec, &init, &opts, &cfg, Some(&nash)).unwrap();
            print!("seed {seed}: ");
            for m in [0, 25, 50, 100, 150, 200, 250, 300, 350, 400, 500, 600] {
                if let Some(rec) = trace.records.iter().find(|r| r.iter == m) {
                    let e = rec
                        .normalized_errors
                        .as_ref()
                        .map(|e| e.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                        .unwrap();
                    print!("{m}:{e:.3} ");
                }
            }
            println!();
        }
    }

    if which == "constant" {
        // Offset drawn once per player and replicated across every t.
        let preset = make_preset(
            "mazumdar",
            &PresetOverrides { sigma2: Some(0.0), ..Default::default() },
        )
        .unwrap();
        let nash = solve_nash(&preset.spec).unwrap();
        for (r, etas) in [
            (0.42, vec![0.001]),
            (0.42, vec![0.001, 0.01]),
            (0.16, vec![0.001]),
        ] {
            let mut fail = 0;
            for seed in 0..24u64 {
                let drawn = init_ball(&nash, r, seed);
                let mut init = nash.k_star.clone();
                for i in 0..2 {
                    let offset = &drawn.gains[i][0] - &nash.k_star.gains[i][0];
                    for t in 0..preset.spec.horizon {
                        init.gains[i][t] = &nash.k_star.gains[i][t] + &offset;
                    }
                }
                let opts = NpgOptions {
                    etas: etas.clone(),
                    max_iters: 10000,
                    tol: 1e-12,
                    snapshot_every: None,
                };
                let trace = run_npg(&preset.spec, &init, &opts, Some(&nash)).unwrap();
                let last = trace.records.last().unwrap();
                let max_err = last
                    .normalized_errors
                    .as_ref()
                    .map(|e| e.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    .unwrap_or(f64::NAN);
                let failed = trace.status == RunStatus::Diverged || max_err > 1.0;
                if failed {
                    fail += 1;
                }
                println!(
                    "constant r={r} etas={etas:?} seed={seed}: status={:?} max_final_err={max_err:.3e}",
                    trace.status
                );
            }
            println!("constant r={r} etas={etas:?}: failed={fail}/24");
        }
    }

    if which == "sphere" {
        // Same grid but with the initial offset pushed to the sphere
        // surface: worst case within the stated radius.
        let preset = make_preset(
            "mazumdar",
            &PresetOverrides { sigma2: Some(0.0), ..Default::default() },
        )
        .unwrap();
        let nash = solve_nash(&preset.spec).unwrap();
        for r in [0.42, 0.16] {
            let mut fail = 0;
            for seed in 0..24u64 {
                // Rescale every per-(i,t) offset to norm exactly r.
                let mut init = init_ball(&nash, r, seed);
                for i in 0..2 {
                    for t in 0..preset.spec.horizon {
                        let diff = &init.gains[i][t] - &nash.k_star.gains[i][t];
                        let n = diff.norm();
                        init.gains[i][t] =
                            &nash.k_star.gains[i][t] + diff * (r / n);
                    }
                }
                let opts = NpgOptions {
                    etas: vec![0.001],
                    max_iters: 10000,
                    tol: 1e-12,
                    snapshot_every: None,
                };
                let trace = run_npg(&preset.spec, &init, &opts, Some(&nash)).unwrap();
                let last = trace.records.last().unwrap();
                let max_err = last
                    .normalized_errors
                    .as_ref()
                    .map(|e| e.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    .unwrap_or(f64::NAN);
                let failed = trace.status == RunStatus::Diverged || max_err > 1.0;
                if failed {
                    fail += 1;
                }
                println!(
                    "sphere r={r} seed={seed}: status={:?} final_iter={} max_final_err={max_err:.3e}",
                    trace.status, last.iter
                );
            }
            println!("sphere r={r}: failed={fail}/24");
        }
    }

    if which == "synthetic" || which == "all" {
        for sigma2 in [0.1, 0.0001] {
            let mut ok = 0;
            for seed in 0..10u64 {
                let preset = make_preset(
                    "synthetic",
                    &PresetOverrides { sigma2: Some(sigma2), ..Default::default() },
                )
                .unwrap();
                let nash = solve_nash(&preset.spec).unwrap();
                let init = preset.explicit_init().unwrap();
                let iters = if sigma2 >= 0.1 { 300 } else { 500 };
                let opts = NpgOptions { etas: vec![0.0005], max_iters: iters, tol: 1e-10, snapshot_every: None };
                let cfg = ZoConfig::new(200, 0.5, seed);
                let trace = run_npg_free(&preset.spec, &init, &opts, &cfg, Some(&nash)).unwrap();
                let below = trace.first_iter_below(0.05);
                let last = trace.records.last().unwrap();
                let max_err = last
                    .normalized_errors
                    .as_ref()
                    .map(|e| e.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    .unwrap_or(f64::NAN);
                let reached = below.is_some();
                if sigma2 >= 0.1 && reached {
                    ok += 1;
                }
                if sigma2 < 0.1 && !reached {
                    ok += 1;
                }
                println!(
                    "synthetic s2={sigma2} seed={seed}: status={:?} first<5%={:?} final_iter={} max_final_err={max_err:.3e}",
                    trace.status, below, last.iter
                );
            }
            println!("synthetic s2={sigma2}: {}/10 seeds in expected regime", ok);
        }
    }
}
