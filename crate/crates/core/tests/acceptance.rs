//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `LYAPCERT_BLESS=1` to rewrite the golden reports under
//! `configs/golden` instead of comparing against them.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use lyapcert::averaging::{
    budget_for_delta, build_averaged_lyapunov, check_drift_remainder, estimate_average, estimate_sigma, mu, verify_averaged,
    AveragingOptions, DriftSample, Eps2Rule,
};
use lyapcert::certcheck::CandidateFunction;
use lyapcert::converse::{
    build_autonomous_converse, build_exponential_converse, converse_samples, fit_fast_envelope, verify_converse, ConverseOptions,
};
use lyapcert::dynsys::{transition_matrix, DynSystem, ExponentialEnvelope, LinearTV, MapFn, SlowFastSystem};
use lyapcert::frontend::{parse_expression, run_command, SystemConfig};
use lyapcert::linalg::{operator_norm, spectral_radius};
use lyapcert::linearize::{certify_local_autonomous, validate_basin, LocalOptions, Verdict};
use lyapcert::rng::SeededRng;
use lyapcert::stein::{
    classify_linear, instability_certificate, solve_stein_kron, solve_stein_series, stein_residual, verify_transition_decay,
};
use lyapcert::timescales::{certify_semiglobal, pair_samples, validate_rate, verify_composite, TimescaleOptions};
use lyapcert::{Matrix, Vector};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, f64);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut SeededRng, n: usize) -> Matrix {
    Matrix::from_fn(n, n, |_, _| rng.uniform(-1.0, 1.0))
}

fn random_pd(rng: &mut SeededRng, n: usize) -> Matrix {
    let b = random_matrix(rng, n);
    &b * b.transpose() + Matrix::identity(n, n) * 0.1
}

fn schur_suite() -> Vec<(Matrix, Matrix)> {
    let mut rng = SeededRng::new(0xacc1);
    (0..200)
        .map(|_| {
            let n = rng.int_in(2, 6) as usize;
            let a = random_matrix(&mut rng, n);
            let target = rng.uniform(0.05, 0.9);
            let a = &a * (target / spectral_radius(&a).unwrap().max(1e-9));
            (a, random_pd(&mut rng, n))
        })
        .collect()
}

fn c1_stein_oracle() -> Outcome {
    let mut worst_diff: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for (a, q) in schur_suite() {
        let k = solve_stein_kron(&a, &q).map_err(|e| e.to_string())?;
        let s = solve_stein_series(&a, &q, 1e-14).map_err(|e| e.to_string())?;
        worst_diff = worst_diff.max((&k.p - &s.p).amax());
        worst_res = worst_res.max(stein_residual(&a, &k.p, &q) / q.norm());
    }
    ensure(worst_diff <= 1e-8, || format!("max |P_kron - P_series| = {worst_diff:e}"))?;
    ensure(worst_res <= 1e-9, || format!("max relative residual {worst_res:e}"))?;
    Ok(format!("max diff {worst_diff:.1e}, max rel residual {worst_res:.1e}"))
}

fn c2_scalar_closed_forms() -> Outcome {
    let one = Matrix::from_element(1, 1, 1.0);
    let p_stable = solve_stein_kron(&Matrix::from_element(1, 1, 0.5), &one)
        .map_err(|e| e.to_string())?
        .p[(0, 0)];
    ensure((p_stable - 4.0 / 3.0).abs() <= 1e-12, || format!("a=0.5 gives P={p_stable}"))?;
    let two = Matrix::from_element(1, 1, 2.0);
    let p = solve_stein_kron(&two, &one).map_err(|e| e.to_string())?.p[(0, 0)];
    ensure((p + 1.0 / 3.0).abs() <= 1e-12, || format!("a=2 gives P={p}"))?;
    let cert = instability_certificate(&two, &one).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in -50..=50 {
        let x = Vector::from_element(1, i as f64 * 0.1);
        let dv = cert.value(&(&two * &x)) - cert.value(&x);
        worst = worst.max((dv - x[0] * x[0]).abs());
    }
    ensure(worst <= 1e-10, || format!("|dV - x^2| up to {worst:e}"))?;
    Ok(format!(
        "P(0.5) = {p_stable:.12}, P(2) = {p:.12}, dV = x^2 within {worst:.1e}"
    ))
}

fn c3_definiteness_dichotomy() -> Outcome {
    let mut cases: Vec<(Matrix, Matrix)> = schur_suite();
    let mut rng = SeededRng::new(0xb0b);
    let mut unstable = 0;
    while unstable < 50 {
        let n = rng.int_in(2, 5) as usize;
        let a = random_matrix(&mut rng, n);
        let a = &a * (rng.uniform(1.1, 2.5) / spectral_radius(&a).unwrap().max(1e-9));
        if !classify_linear(&a).unwrap().solvable {
            continue;
        }
        cases.push((a, random_pd(&mut rng, n)));
        unstable += 1;
    }
    let mut exceptions = 0;
    for (a, q) in &cases {
        let schur = classify_linear(a).unwrap().schur;
        let pd = solve_stein_kron(a, q).map_err(|e| e.to_string())?.positive_definite;
        if pd != schur {
            exceptions += 1;
        }
    }
    ensure(exceptions == 0, || format!("{exceptions} exceptions"))?;
    Ok(format!("{} matrices, 0 exceptions", cases.len()))
}

fn c4_converse() -> Outcome {
    let sys = DynSystem::new(1, true, |_, x| x * 0.5).map_err(|e| e.to_string())?;
    let env = ExponentialEnvelope::new(1.0, 2f64.ln(), 1.0).map_err(|e| e.to_string())?;
    let cert = build_autonomous_converse(&sys, &env).map_err(|e| e.to_string())?;
    ensure(cert.horizon == 1, || format!("N = {}", cert.horizon))?;
    for i in 1..=20 {
        let x = Vector::from_element(1, i as f64 * 0.05);
        let v = cert.evaluate(0, &x, None);
        ensure((v - x[0] * x[0]).abs() <= 1e-15, || format!("V({}) = {v}", x[0]))?;
        let dv = cert.evaluate(1, &(&x * 0.5), None) - v;
        ensure((dv + 0.75 * x[0] * x[0]).abs() <= 1e-15 && dv <= -0.5 * x[0] * x[0], || {
            format!("dV = {dv}")
        })?;
    }
    let mut rng = SeededRng::new(0xfa);
    for trial in 0..5 {
        let n = rng.int_in(1, 4) as usize;
        let f = random_matrix(&mut rng, n);
        let f = &f * (rng.uniform(0.2, 0.9) / operator_norm(&f));
        let fc = f.clone();
        let sf = SlowFastSystem::new(1, n, |_, x, _| -x, move |_, y, _| &fc * y, move |_| Vector::zeros(n), 0.01)
            .map_err(|e| e.to_string())?;
        let opts = ConverseOptions {
            seed: trial,
            ..Default::default()
        };
        let env = fit_fast_envelope(&sf, &opts).map_err(|e| e.to_string())?;
        let cert = build_exponential_converse(&sf, &env, &opts).map_err(|e| e.to_string())?;
        let reps = verify_converse(&cert, &converse_samples(&cert, n, 1000, trial)).map_err(|e| e.to_string())?;
        ensure(reps.len() == 4, || format!("{} suites", reps.len()))?;
        for r in reps {
            ensure(r.passed, || {
                format!("F #{trial} (n={n}): {:?} failed, margin {:e}", r.condition, r.worst_margin)
            })?;
        }
    }
    Ok("N=1, V=x^2, dV=-0.75x^2; 5 fast maps x 4 suites x 1000 samples clean".into())
}

fn c5_basin() -> Outcome {
    let sys = DynSystem::new(1, true, |_, x| x * 0.5 + x.component_mul(x)).map_err(|e| e.to_string())?;
    let cert = certify_local_autonomous(&sys, &Matrix::identity(1, 1), &LocalOptions::default()).map_err(|e| e.to_string())?;
    ensure(cert.verdict == Verdict::AsymptoticallyStable, || {
        format!("verdict {:?}", cert.verdict)
    })?;
    let expected = 1.75f64.sqrt() - 1.0;
    ensure((cert.gamma_star - expected).abs() <= 1e-9, || {
        format!("gamma* = {}", cert.gamma_star)
    })?;
    let rep = validate_basin(&sys, &cert, 500, 200, 1).map_err(|e| e.to_string())?;
    ensure(rep.passed && rep.samples_checked == 500, || format!("basin failed: {rep:?}"))?;
    let mut inflated = cert.clone();
    inflated.delta_bar = 1.1;
    let bad = validate_basin(&sys, &inflated, 500, 200, 1).map_err(|e| e.to_string())?;
    ensure(!bad.passed && bad.worst_point.is_some(), || {
        "inflated ball shows no violation".into()
    })?;
    Ok(format!(
        "gamma* = {:.12}, delta_bar = {:.4}, inflated witness {:?}",
        cert.gamma_star,
        cert.delta_bar,
        bad.worst_point.map(|p| p.1)
    ))
}

fn alternating() -> MapFn {
    Arc::new(|k, x: &Vector| -x + x * if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 })
}

fn c6_averaging_budget() -> Outcome {
    let opts = AveragingOptions::default();
    let probes = opts.probe_points(1);
    let phi = alternating();
    let states: Vec<Vector> = probes.iter().filter(|p| p.t == 0).map(|p| p.x.clone()).collect();
    let bar = estimate_average(phi.clone(), &states, 64).map_err(|e| e.to_string())?;
    let table = estimate_sigma(&bar, &probes, &[1, 2, 4, 8, 16], 2.2).map_err(|e| e.to_string())?;
    for t in [2usize, 4, 8, 16] {
        let s = table.sigma(t).unwrap();
        ensure(s <= 3.0 / t as f64, || format!("sigma({t}) = {s}"))?;
    }
    let b = budget_for_delta(1.0, &table, Eps2Rule::SquaredSum).map_err(|e| e.to_string())?;
    ensure(b.t_delta <= 4, || format!("T_delta = {}", b.t_delta))?;
    let sigma = table.sigma(b.t_delta).unwrap();
    for i in 0..20 {
        let eps = b.eps_delta * i as f64 / 19.0;
        let m = mu(b.t_delta, eps, table.l, sigma).map_err(|e| e.to_string())?;
        ensure(m <= 1.0, || format!("mu({eps:e}) = {m}"))?;
    }
    let mut rng = SeededRng::new(6);
    let samples: Vec<DriftSample> = (0..200)
        .map(|_| DriftSample {
            k: rng.int_in(0, 100),
            x: rng.in_ball(1, 2.0),
            t: [1, 2, 4, 8, 16][rng.int_in(0, 4) as usize],
            eps: rng.uniform(0.0, 0.1),
        })
        .collect();
    let rep = check_drift_remainder(&bar, &table, &samples).map_err(|e| e.to_string())?;
    ensure(rep.passed, || format!("drift remainder margin {:e}", rep.worst_margin))?;
    Ok(format!(
        "T_delta = {}, eps_delta = {:.3e}, rule {:?}",
        b.t_delta, b.eps_delta, b.threshold_rule
    ))
}

fn c7_averaged_lyapunov() -> Outcome {
    let v = CandidateFunction::new(1, false, |_, x| x[0] * x[0]).map_err(|e| e.to_string())?;
    let cert = build_averaged_lyapunov(&v, alternating(), 1, &AveragingOptions::default()).map_err(|e| e.to_string())?;
    let mut rng = SeededRng::new(7);
    let samples: Vec<(i64, Vector)> = (0..500).map(|_| (rng.int_in(0, 200), rng.in_ball(1, 1.0))).collect();
    let eps: Vec<f64> = (1..=5).map(|i| cert.eps_c * i as f64 / 6.0).collect();
    for r in verify_averaged(&cert, &samples, &eps).map_err(|e| e.to_string())? {
        ensure(r.passed && r.samples_checked == 2500, || {
            format!("{:?} failed: {:e}", r.condition, r.worst_margin)
        })?;
    }
    Ok(format!(
        "T* = {}, eps_c = {:.3e}, a = {:?}",
        cert.t_star, cert.eps_c, cert.constants
    ))
}

fn c8_timescales() -> Outcome {
    let sys =
        SlowFastSystem::new(1, 1, |_, x, y| -x + y, |_, y, _| y * 0.5, |_| Vector::zeros(1), 0.01).map_err(|e| e.to_string())?;
    let v = CandidateFunction::new(1, false, |_, x| x[0] * x[0]).map_err(|e| e.to_string())?;
    let cert = certify_semiglobal(&sys, 1.0, &v, &TimescaleOptions::default()).map_err(|e| e.to_string())?;
    ensure(cert.eps_r > 0.0 && cert.gamma_r > 0.0, || {
        "eps_r or gamma_r not positive".into()
    })?;
    let samples = pair_samples(1, 1, cert.ell.r0, 1000, 8);
    let mut rng = SeededRng::new(88);
    let eps: Vec<f64> = (0..3).map(|_| rng.uniform(0.01, 0.99) * cert.eps_r).collect();
    for r in verify_composite(&sys, &cert, &samples, &eps).map_err(|e| e.to_string())? {
        ensure(r.passed, || format!("{:?} failed: {:e}", r.condition, r.worst_margin))?;
    }
    let rate = validate_rate(&sys, &cert, &[cert.eps_r / 4.0, cert.eps_r / 2.0], 100, 200, 8).map_err(|e| e.to_string())?;
    ensure(rate.passed && rate.samples_checked == 200, || {
        format!("rate validation: {rate:?}")
    })?;
    Ok(format!(
        "eps_r = {:.3e}, gamma_r = {:.4}, ell_U = {:.4}, C_r = {:.3}",
        cert.eps_r, cert.gamma_r, cert.ell_u, cert.c_r
    ))
}

fn c9_transition_laws() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let sys = LinearTV::new(
            3,
            move |t| {
                let mut rng = SeededRng::new(seed.wrapping_mul(31) ^ t as u64);
                Matrix::from_fn(3, 3, |_, _| rng.uniform(-0.7, 0.7))
            },
            None,
        )
        .map_err(|e| e.to_string())?;
        for (t0, s, t) in [(0, 3, 7), (-4, 0, 5), (2, 2, 9)] {
            let lhs = transition_matrix(&sys, t, t0).map_err(|e| e.to_string())?;
            let rhs = transition_matrix(&sys, t, s).unwrap() * transition_matrix(&sys, s, t0).unwrap();
            worst = worst.max((lhs - rhs).amax());
        }
    }
    ensure(worst <= 1e-12, || format!("cocycle error {worst:e}"))?;
    let mut checked = 0;
    for (lo, hi) in [(0.2, 0.8), (0.1, 1.5), (0.5, 0.9)] {
        let sys = LinearTV::new(
            1,
            move |t| Matrix::from_element(1, 1, if t.rem_euclid(2) == 0 { lo } else { hi }),
            Some(2),
        )
        .map_err(|e| e.to_string())?;
        let t0s: Vec<i64> = (0..8).collect();
        let d = verify_transition_decay(&sys, &t0s, 40).map_err(|e| e.to_string())?;
        for &t0 in &t0s {
            for k in 0..60u64 {
                let n = operator_norm(&transition_matrix(&sys, t0 + k as i64, t0).unwrap());
                ensure(n <= d.envelope.bound(1.0, k) * (1.0 + 1e-12), || {
                    format!("({lo},{hi}) t0={t0} k={k}: {n:e}")
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("cocycle error {worst:.1e}; {checked} envelope points, 0 violations"))
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn c10_frontend() -> Outcome {
    let corpus = include_str!("data/expr_corpus.txt");
    let mut n = 0;
    for line in corpus.lines().filter(|l| !l.trim().is_empty()) {
        let e = parse_expression(line).map_err(|e| format!("{line}: {e}"))?;
        let printed = e.to_string();
        let again = parse_expression(&printed).map_err(|e| e.to_string())?;
        ensure(again == e && again.to_string() == printed, || {
            format!("round trip differs for {line}")
        })?;
        n += 1;
    }
    ensure(n == 100, || format!("corpus has {n} expressions"))?;

    let bless = std::env::var_os("LYAPCERT_BLESS").is_some();
    let dir = config_dir();
    let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    ensure(!names.is_empty(), || "no golden configs".into())?;
    for path in &names {
        let cfg = SystemConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let command = cfg
            .analyses
            .first()
            .map(|a| a.command.clone())
            .ok_or("config without analyses")?;
        let first = run_command(&cfg, &command, None).to_json();
        let second = run_command(&cfg, &command, None).to_json();
        ensure(first == second, || format!("{} is not deterministic", path.display()))?;
        let golden = dir.join("golden").join(path.file_name().unwrap());
        if bless {
            std::fs::create_dir_all(golden.parent().unwrap()).map_err(|e| e.to_string())?;
            std::fs::write(&golden, &first).map_err(|e| e.to_string())?;
        }
        let expected = std::fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
        ensure(expected == first, || {
            format!("{} differs from its golden report", path.display())
        })?;
    }
    Ok(format!(
        "{n} expressions round-trip; {} golden reports byte-identical",
        names.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("stein oracle equivalence", c1_stein_oracle, 10.0),
        ("scalar closed forms", c2_scalar_closed_forms, f64::INFINITY),
        ("definiteness dichotomy", c3_definiteness_dichotomy, f64::INFINITY),
        ("converse constructions", c4_converse, 30.0),
        ("indirect method basin", c5_basin, f64::INFINITY),
        ("averaging budget", c6_averaging_budget, f64::INFINITY),
        ("averaged lyapunov", c7_averaged_lyapunov, f64::INFINITY),
        ("two time scale end to end", c8_timescales, 60.0),
        ("transition matrix laws", c9_transition_laws, f64::INFINITY),
        ("frontend round trip and golden reports", c10_frontend, f64::INFINITY),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(m) if secs > *limit => Err(format!("{m} (took {secs:.1}s, limit {limit}s)")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS {:>2} {name} [{secs:.2}s]: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name} [{secs:.2}s]: {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
