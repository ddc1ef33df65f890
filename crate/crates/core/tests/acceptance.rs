//! Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.
//!
//! Lines are written to stderr directly so they appear even when test output is captured.
//! Tests share a lock so runtime budgets are measured without contention.

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use mfsocial::cli;
use mfsocial::linalg::{is_hurwitz, Matrix, Tolerance, Vector};
use mfsocial::model::{Horizon, ProblemSpec, SignalFn};
use mfsocial::presets;
use mfsocial::riccati::{
    scalar_are_residual_floor, solve_are, solve_finite_limit, solve_finite_n, solve_pi,
    solve_stationary_p,
};
use mfsocial::simulator::{expected_cost, simulate_meanfield_type, simulate_population, SimConfig};
use mfsocial::social::{asymptotic_value, gap_curve};
use mfsocial::stability::{check, check_ms_stable};
use mfsocial::synthesis::{
    build_centralized_finite, build_law_finite, build_law_infinite, stationarity_defect,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static LOCK: Mutex<()> = Mutex::new(());

fn report(id: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // written past the harness capture so the verdict lines always show
    let _ = writeln!(std::io::stderr(), "[acceptance] {id} {verdict}: {detail}");
}

fn info(id: &str, detail: &str) {
    let _ = writeln!(std::io::stderr(), "[acceptance] {id} info: {detail}");
}

fn m1(x: f64) -> Matrix {
    Matrix::from_element(1, 1, x)
}

#[test]
fn c1_closed_form_riccati() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let tol = Tolerance::default().with_ode_step(1e-4);
    let r: f64 = -0.5;
    let mut worst: f64 = 0.0;
    // unit terminal weight; its horizon limit is ½ln(((1+r)² + r²)/r²)
    let t_max_unit = 0.5 * (((1.0 + r) * (1.0 + r) + r * r) / (r * r)).ln();
    // terminal weight 1 − r, under which the closed form carries 1 + r²
    for (h, t_max) in [(1.0, t_max_unit), (1.0 - r, presets::example1_t_max(r))] {
        let big_t = 0.8 * t_max;
        let sol = solve_finite_limit(&presets::example1(r, h, big_t), &tol).unwrap();
        for (i, &t) in sol.times.iter().enumerate() {
            let exact = presets::example1_closed_form(r, h, big_t, t);
            worst = worst.max((sol.p[i][(0, 0)] - exact).abs() / exact.abs());
        }
    }
    let scalar_time = start.elapsed().as_secs_f64();

    let rm = Matrix::from_row_slice(2, 2, &[-0.5, 0.1, 0.1, -0.3]);
    let big_t = 0.8 * presets::example2_t_hat(&rm, 1.0);
    let sol = solve_finite_limit(&presets::example2(&rm, 1.0, big_t), &tol).unwrap();
    let mut worst2: f64 = 0.0;
    for (i, &t) in sol.times.iter().enumerate() {
        let exact = presets::example2_closed_form(&rm, 1.0, big_t, t);
        worst2 = worst2.max((&sol.p[i] - &exact).amax() / exact.amax());
    }
    let pass = worst <= 1e-6 && worst2 <= 1e-6 && scalar_time < 1.0;
    report(
        "C1",
        pass,
        &format!(
            "scalar max rel err {worst:.2e}, matrix max rel err {worst2:.2e} (tol 1e-6); scalar runtime {scalar_time:.3} s (< 1 s)"
        ),
    );
    assert!(pass);
}

#[test]
fn c2_pinned_cross_check_and_residuals() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let tol = Tolerance::default();
    let pinned = presets::sec6_pinned();
    let (pi, pi_res) = solve_pi(&pinned, pinned.pinned_p.as_ref().unwrap(), &tol).unwrap();
    let pi_ok = (pi[(0, 0)] - presets::SEC6_REFERENCE_PI).abs() <= 1e-3;

    // the unpinned problem: report what the solver finds
    let sec6 = presets::sec6();
    let own = solve_stationary_p(&sec6, &tol);
    let floor = scalar_are_residual_floor(&sec6, &tol);
    let own_desc = match &own {
        Ok(sp) => format!("solved P = {:.6} with residual {:.2e}", sp.p[(0, 0)], sp.residual),
        Err(e) => format!(
            "no real stationary P ({e}); residual floor {:.4} at P = {:.4}",
            floor.map_or(f64::NAN, |f| f.1),
            floor.map_or(f64::NAN, |f| f.0)
        ),
    };
    let own_ok = own.as_ref().map_or(true, |sp| sp.residual <= 1e-8);

    // every solution the module returns carries a small residual
    let mut solvable = presets::sec6();
    solvable.c = m1(0.0);
    solvable.sigma = SignalFn::Exponential { a: vec![0.3], b: -1.0 };
    let sol = solve_are(&solvable, &tol, 10.0).unwrap();
    let mut definite = presets::sec6();
    definite.r = m1(1.0);
    let sol2 = solve_are(&definite, &tol, 10.0).unwrap();
    let residuals = [sol.residual_p, sol.residual_pi, sol2.residual_p, sol2.residual_pi, pi_res];
    let res_ok = residuals.iter().all(|&r| r <= 1e-8);
    let worst = residuals.iter().fold(0.0_f64, |a, &b| a.max(b));

    let pass = pi_ok && own_ok && res_ok;
    report(
        "C2",
        pass,
        &format!(
            "Pi at pinned P = {:.6} (target 0.3290 ± 1e-3); {own_desc}; worst residual of returned solutions {worst:.2e} (tol 1e-8)",
            pi[(0, 0)]
        ),
    );
    assert!(pass);
}

#[test]
fn c3_consistency_rate() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    // the reference stationary P is supplied: the unpinned problem has no real solution
    let spec = presets::sec6_pinned();
    let tol = Tolerance::default().with_ode_step(1e-3);
    let t_sim = 20.0;
    let sol = solve_are(&spec, &tol, t_sim).unwrap();
    let law = build_law_infinite(&sol, &spec, &tol).unwrap();
    let ns = [10usize, 20, 40, 80];
    let mut errs = Vec::new();
    for &n in &ns {
        let out = simulate_population(&spec.with_agents(n), &law, &SimConfig::new(1e-3, t_sim, 100, 7)).unwrap();
        errs.push(out.consistency_error);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[1].mean / w[0].mean).collect();
    let exact: Vec<f64> = ns
        .iter()
        .map(|&n| expected_cost(&spec.with_agents(n), &law, Some(n), t_sim, 1e-3).unwrap().consistency)
        .collect();
    info(
        "C3",
        &format!(
            "Monte Carlo errors {:?}; exact {:?}",
            errs.iter().map(|e| format!("{:.4e}±{:.1e}", e.mean, e.se)).collect::<Vec<_>>(),
            exact.iter().map(|e| format!("{e:.4e}")).collect::<Vec<_>>()
        ),
    );
    let pass = ratios.iter().all(|r| (0.3..=0.8).contains(r)) && elapsed < 300.0;
    report(
        "C3",
        pass,
        &format!(
            "successive ratios {:?} (range [0.3, 0.8]), 100 replications per N, runtime {elapsed:.1} s (< 300 s)",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn c4_optimality_gap() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    // finite-horizon variant: the infinite-horizon problem has no stationary solution
    let spec = presets::sec6_finite(1.0, 10.0);
    let tol = Tolerance::default().with_ode_step(1e-3);
    let mut cfg = SimConfig::new(1e-3, 1.0, 4000, 1);
    cfg.antithetic = true;
    let curve = gap_curve(&spec, &[1, 2, 5, 10, 20, 50], &cfg, &tol).unwrap();
    let eps: Vec<_> = curve.points.iter().map(|p| p.epsilon.unwrap()).collect();
    let monotone = eps
        .windows(2)
        .all(|w| w[1].mean <= w[0].mean + 2.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt());
    let slope = curve.log_slope(5);
    let slope_ok = slope.is_some_and(|s| (-1.1..=-0.4).contains(&s));

    let exact: Vec<f64> = curve.points.iter().map(|p| p.exact_epsilon.unwrap()).collect();
    info(
        "C4",
        &format!(
            "exact differences {:?}, strictly decreasing {}, exact slope {:.3}",
            exact.iter().map(|e| format!("{e:.4e}")).collect::<Vec<_>>(),
            exact.windows(2).all(|w| w[1] < w[0]),
            curve.exact_log_slope(5).unwrap_or(f64::NAN)
        ),
    );
    let pass = monotone && slope_ok;
    report(
        "C4",
        pass,
        &format!(
            "Monte Carlo epsilon {:?}; nonincreasing within 2 SE {monotone}; slope over N >= 5 {} (range [-1.1, -0.4])",
            eps.iter().map(|e| format!("{:.3e}±{:.1e}", e.mean, e.se)).collect::<Vec<_>>(),
            slope.map_or("undefined (non-positive estimate)".into(), |s| format!("{s:.3}"))
        ),
    );
    assert!(pass);
}

#[test]
fn c5_asymptotic_value() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let tol = Tolerance::default().with_ode_step(1e-3);
    let spec = presets::sec6_pinned();
    let t_sim = 20.0;
    let sol = solve_are(&spec, &tol, t_sim).unwrap();
    let value = asymptotic_value(&spec, &sol);

    let law = build_law_infinite(&sol, &spec, &tol).unwrap();
    let mf = simulate_meanfield_type(&spec, &law, &SimConfig::new(1e-3, t_sim, 10_000, 5)).unwrap();
    info(
        "C5",
        &format!(
            "single-agent Monte Carlo cost on [0, {t_sim}] = {:.4}±{:.2}, tail bound {}, plateau increment {:.3}",
            mf.cost_per_agent.mean,
            mf.cost_per_agent.se,
            mf.tail_bound,
            mf.plateau_increment
        ),
    );

    // the same check on a variant with square-integrable forcing
    let mut variant = presets::sec6();
    variant.c = m1(0.0);
    variant.sigma = SignalFn::Exponential { a: vec![0.3], b: -1.0 };
    variant.eta = SignalFn::Exponential { a: vec![1.0], b: -0.5 };
    let vsol = solve_are(&variant, &tol, 30.0).unwrap();
    let vval = asymptotic_value(&variant, &vsol).unwrap();
    let vlaw = build_law_infinite(&vsol, &variant, &tol).unwrap();
    let vexact = expected_cost(&variant, &vlaw, None, 30.0, 1e-3).unwrap().per_agent;
    let vmc = simulate_meanfield_type(&variant, &vlaw, &SimConfig::new(1e-3, 30.0, 10_000, 5)).unwrap();
    info(
        "C5",
        &format!(
            "square-integrable variant: value {:.6}, exact single-agent cost {vexact:.6}, Monte Carlo {:.4}±{:.4}, tail bound {:.2e}",
            vval.value, vmc.cost_per_agent.mean, vmc.cost_per_agent.se, vval.tail_bound
        ),
    );

    let (pass, detail) = match value {
        Ok(v) => {
            let mf_ok = (v.value - mf.cost_per_agent.mean).abs() <= 3.0 * mf.cost_per_agent.se;
            let pop = simulate_population(&spec.with_agents(200), &law, &SimConfig::new(1e-3, t_sim, 1000, 6)).unwrap();
            let pop_ok = (v.value - pop.cost_per_agent.mean).abs() <= 3.0 * pop.cost_per_agent.se;
            let tail_ok = v.tail_bound < 0.01 * v.value.abs();
            (
                mf_ok && pop_ok && tail_ok,
                format!("value {:.6}; single agent {mf_ok}, N = 200 {pop_ok}, tail {tail_ok}", v.value),
            )
        }
        Err(e) => (false, format!("value not defined: {e}")),
    };
    report("C5", pass, &detail);
    assert!(pass);
}

#[test]
fn c6_stationarity_identity() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let spec = presets::sec6_finite(1.0, 10.0).with_agents(10);
    let tol = Tolerance::default().with_ode_step(1e-3);
    let sol = solve_finite_limit(&spec, &tol).unwrap();
    let law = build_law_finite(&sol, &spec, &tol).unwrap();
    let mut cfg = SimConfig::new(1e-3, 1.0, 1, 21);
    cfg.record_paths = true;
    cfg.thinning = 1;
    let paths = simulate_population(&spec, &law, &cfg).unwrap().paths.unwrap();
    assert_eq!(paths.times.len(), sol.times.len());
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for (k, &t) in paths.times.iter().enumerate() {
        assert!((t - sol.times[k]).abs() < 1e-9);
        let xbar = Vector::from_column_slice(&paths.xbar[k]);
        for a in 0..paths.agents {
            let x = Vector::from_column_slice(paths.state(k, a));
            let u = Vector::from_column_slice(paths.control(k, a));
            worst = worst.max(stationarity_defect(&spec, &sol, k, &xbar, &x, &u));
            samples += 1;
        }
    }
    let pass = worst <= 1e-5;
    report(
        "C6",
        pass,
        &format!("max defect {worst:.2e} over {samples} samples of 10 paths (tol 1e-5)"),
    );
    assert!(pass);
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn random_definite_spec(rng: &mut ChaCha8Rng) -> ProblemSpec {
    let n = rng.random_range(1..=3);
    let r = rng.random_range(1..=n);
    let mut s = ProblemSpec::zeros(n, r, Horizon::Infinite);
    s.a = random_matrix(rng, n, n, 1.0);
    s.b = random_matrix(rng, n, r, 1.0);
    s.c = random_matrix(rng, n, n, 0.4);
    s.d = random_matrix(rng, n, r, 0.4);
    s.g = random_matrix(rng, n, n, 0.3);
    s.gamma = random_matrix(rng, n, n, 0.3);
    let l = random_matrix(rng, n, n, 1.0);
    s.q = &l * l.transpose() + Matrix::identity(n, n) * 0.1;
    let m = random_matrix(rng, r, r, 0.5);
    s.r = Matrix::identity(r, r) + &m * m.transpose();
    s.x0_mean = Vector::from_element(n, 1.0);
    s.agents = 10;
    s
}

#[test]
fn c7_stability_suite_coherence() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let tol = Tolerance::default();
    let sec6 = check(&presets::sec6(), &tol).unwrap();
    let mut agree = vec![("sec6".to_string(), sec6.verdicts.via_riccati, sec6.verdicts.via_stabilizability)];
    let pinned = check(&presets::sec6_pinned(), &tol).unwrap();
    info(
        "C7",
        &format!(
            "pinned variant (hypotheses hold: {}): riccati {} stabilizability {}",
            pinned.verdicts.hypotheses_hold, pinned.verdicts.via_riccati, pinned.verdicts.via_stabilizability
        ),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..10 {
        let rep = check(&random_definite_spec(&mut rng), &tol).unwrap();
        agree.push((format!("random{i}"), rep.verdicts.via_riccati, rep.verdicts.via_stabilizability));
    }
    let disagreements: Vec<_> = agree.iter().filter(|a| a.1 != a.2).collect();
    let true_count = agree.iter().filter(|a| a.1).count();

    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=4);
        let a = random_matrix(&mut rng, n, n, 1.5);
        let ms = check_ms_stable(&a, &Matrix::zeros(n, n), &tol).unwrap();
        if ms.hurwitz != is_hurwitz(&a, &tol).unwrap().hurwitz {
            mismatches += 1;
        }
    }
    let pass = disagreements.is_empty() && mismatches == 0;
    report(
        "C7",
        pass,
        &format!(
            "verdicts agree on {}/{} specs ({} with both true); ms-stability vs Hurwitz mismatches {mismatches}/100",
            agree.len() - disagreements.len(),
            agree.len(),
            true_count
        ),
    );
    assert!(pass);
}

#[test]
fn c8_trivial_zero() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let tol = Tolerance::default().with_ode_step(1e-2);
    let mut worst: f64 = 0.0;
    let fin = presets::trivial_zero(2, 1, Horizon::Finite(1.0)).with_agents(4);
    let lim = solve_finite_limit(&fin, &tol).unwrap();
    let pop = solve_finite_n(&fin, &tol).unwrap();
    for sol in [&lim, &pop] {
        for m in sol.p.iter().chain(&sol.k) {
            worst = worst.max(m.amax());
        }
        for v in &sol.s {
            worst = worst.max(v.amax());
        }
    }
    let dec = build_law_finite(&lim, &fin, &tol).unwrap();
    let cen = build_centralized_finite(&pop, &fin, &tol).unwrap();
    let mut cost: f64 = 0.0;
    for law in [&dec, &cen] {
        for k in 0..law.g.len() {
            worst = worst
                .max(law.f_self.values[k].amax())
                .max(law.f_mf.values[k].amax())
                .max(law.g.values[k].amax());
        }
        let out = simulate_population(&fin, law, &SimConfig::new(1e-2, 1.0, 8, 3)).unwrap();
        cost = cost.max(out.social_cost.abs());
    }

    let inf = presets::trivial_zero(2, 1, Horizon::Infinite).with_agents(4);
    let isol = solve_are(&inf, &tol, 5.0).unwrap();
    worst = worst.max(isol.p.amax()).max(isol.pi.amax());
    for v in &isol.s.values {
        worst = worst.max(v.amax());
    }
    let ilaw = build_law_infinite(&isol, &inf, &tol).unwrap();
    let iout = simulate_population(&inf, &ilaw, &SimConfig::new(1e-2, 5.0, 8, 3)).unwrap();
    cost = cost.max(iout.social_cost.abs());

    let pass = worst <= 1e-12 && cost <= 1e-12;
    report(
        "C8",
        pass,
        &format!("max |Riccati / gain entry| {worst:.1e}, max |simulated cost| {cost:.1e} (tol 1e-12)"),
    );
    assert!(pass);
}

fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn c9_determinism() {
    let _g = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
    let mut runs = Vec::new();
    let mut codes = Vec::new();
    for spec in ["sec6.json", "sec6_pinned.json"] {
        let path = format!("{data}/{spec}");
        for _ in 0..2 {
            let argv = [
                "mfsocial",
                "reproduce-paper",
                &path,
                "--seed",
                "1",
                "--out-dir",
                dir.path().to_str().unwrap(),
            ];
            codes.push(cli::run(argv));
            runs.push(snapshot(dir.path()));
        }
    }
    let expected = ["check.json", "fig1.csv", "fig2.csv", "fig3.csv", "manifest.json", "value.json"];
    let names: Vec<_> = runs[0].iter().map(|f| f.0.as_str()).collect();
    let identical = runs[0] == runs[1] && runs[2] == runs[3];
    let hash = cli::manifest_hash_of(&String::from_utf8_lossy(&runs[3][4].1)).unwrap();
    let stamped = runs[3]
        .iter()
        .all(|(_, bytes)| cli::manifest_hash_of(&String::from_utf8_lossy(bytes)).as_deref() == Some(&hash));
    let parse = runs[3].iter().all(|(name, bytes)| {
        let text = String::from_utf8_lossy(bytes);
        if name.ends_with(".csv") {
            cli::read_csv(&text).is_ok()
        } else {
            serde_json::from_str::<serde_json::Value>(&text).is_ok()
        }
    });
    let pass = identical && names == expected && codes.iter().all(|&c| c == 0) && stamped && parse;
    report(
        "C9",
        pass,
        &format!(
            "two runs per problem byte-identical {identical}; files {names:?}; exit codes {codes:?}; manifest stamped {stamped}; outputs parse {parse}"
        ),
    );
    assert!(pass);
}
