//! Command dispatch: one config plus one command gives one report.

use std::sync::Arc;

use serde::Serialize;

use super::config::{Options, SystemConfig, SystemKind};
use super::expr::Expr;
use super::report::{CheckEntry, Report};
use crate::averaging::{
    budget_for_delta, build_averaged_lyapunov, check_drift_remainder, estimate_average, estimate_sigma, verify_averaged,
    AveragingOptions, DriftSample, Eps2Rule,
};
use crate::certcheck::{CandidateFunction, SampleGrid};
use crate::converse::{
    build_autonomous_converse, build_exponential_converse, build_finite_time_converse, build_nonautonomous_converse,
    converse_samples, estimate_lipschitz, fit_fast_envelope, verify_converse, ConverseOptions,
};
use crate::dynsys::{fit_exponential_envelope, simulate, simulate_batch, EnvelopeFitOptions, MapFn};
use crate::linearize::{certify_local_autonomous, certify_local_nonautonomous, validate_basin, LocalOptions, Verdict};
use crate::rng::SeededRng;
use crate::stein::{
    classify_linear, default_t0_samples, instability_certificate, solve_stein_kron, solve_stein_series, solve_tv_lyapunov,
    verify_transition_decay,
};
use crate::timescales::{
    certify_semiglobal, check_global_hypotheses, pair_samples, validate_rate, verify_composite, TimescaleOptions,
};
use crate::{Error, Matrix, Result, Vector};

pub const COMMANDS: [&str; 6] = ["simulate", "linear", "certify-local", "converse", "averaging", "timescales"];

/// Runs `command` on `cfg`. Errors are recorded in the report, never returned.
pub fn run_command(cfg: &SystemConfig, command: &str, seed_override: Option<u64>) -> Report {
    let seed = seed_override.unwrap_or(cfg.seed);
    let mut report = Report::new(command, &cfg.digest, seed);
    let outcome = match command {
        "simulate" => cmd_simulate(cfg, &mut report),
        "linear" => cmd_linear(cfg, &mut report),
        "certify-local" => cmd_certify_local(cfg, seed, &mut report),
        "converse" => cmd_converse(cfg, seed, &mut report),
        "averaging" => cmd_averaging(cfg, seed, &mut report),
        "timescales" => cmd_timescales(cfg, seed, &mut report),
        other => Err(Error::InvalidArgument(format!(
            "unknown command '{other}' (expected one of {})",
            COMMANDS.join(", ")
        ))),
    };
    if let Err(e) = outcome {
        report.fail_with(&e);
    }
    report.finish();
    report
}

fn unsupported(cfg: &SystemConfig, command: &str) -> Error {
    Error::InvalidArgument(format!("'{command}' does not apply to {} systems", cfg.kind.name()))
}

fn state_dim(cfg: &SystemConfig) -> usize {
    cfg.x_dim + cfg.y_dim
}

#[derive(Serialize)]
struct TrajectoryOut<'a> {
    t0: i64,
    states: Vec<&'a [f64]>,
}

fn cmd_simulate(cfg: &SystemConfig, report: &mut Report) -> Result<()> {
    let opts = Options::new(cfg.analysis("simulate"));
    let horizon = opts.usize_or("horizon", 20)?;
    let t0 = opts.i64_or("t0", 0)?;
    let x0 = opts.vec_opt("x0")?.ok_or_else(|| Error::Config {
        pointer: cfg
            .analysis("simulate")
            .map_or("/analyses".into(), |a| format!("{}/x0", a.pointer)),
        message: "simulate needs an initial state x0".into(),
    })?;
    if x0.len() != state_dim(cfg) {
        return Err(Error::Dimension {
            expected: state_dim(cfg),
            got: x0.len(),
        });
    }
    let sys = cfg.dyn_system()?;
    let traj = simulate(&sys, t0, &Vector::from_vec(x0), horizon)?;
    report.push_result(
        "trajectory",
        &TrajectoryOut {
            t0: traj.t0,
            states: traj.states.iter().map(|s| s.as_slice()).collect(),
        },
    )?;
    report.push_result("csv", &traj.to_csv())?;
    Ok(())
}

fn identity_q(opts: &Options, n: usize) -> Result<Matrix> {
    Ok(opts.matrix_opt("q", n)?.unwrap_or_else(|| Matrix::identity(n, n)))
}

fn cmd_linear(cfg: &SystemConfig, report: &mut Report) -> Result<()> {
    let opts = Options::new(cfg.analysis("linear"));
    let n = cfg.x_dim;
    let q = identity_q(&opts, n)?;
    let a = match cfg.kind {
        SystemKind::LinearTv if cfg.period != Some(1) => return linear_time_varying(cfg, &opts, &q, report),
        SystemKind::LinearTv => cfg.linear_tv()?.at(0),
        SystemKind::Autonomous => {
            let sys = cfg.dyn_system()?;
            let eq = sys.equilibrium().cloned().unwrap_or_else(|| Vector::zeros(n));
            let jac = crate::linearize::numerical_jacobian(&sys, 0, &eq)?;
            report.push_result("jacobian", &jac)?;
            jac.a
        }
        _ => return Err(unsupported(cfg, "linear")),
    };
    let spectrum = classify_linear(&a)?;
    report.push_result("spectrum", &spectrum)?;
    if spectrum.solvable {
        let sol = match opts.str_opt("method")?.unwrap_or("kronecker") {
            "kronecker" => solve_stein_kron(&a, &q)?,
            "series" if spectrum.stable() => solve_stein_series(&a, &q, opts.f64_or("tol", 1e-12)?)?,
            "series" => {
                return Err(Error::DivergentSeries {
                    spectral_radius: spectrum.spectral_radius,
                })
            }
            other => return Err(Error::InvalidArgument(format!("unknown Stein method '{other}'"))),
        };
        report.push_result("stein", &sol)?;
        let qn = q.norm();
        report.push_check(CheckEntry::scalar(
            "stein_residual",
            sol.residual <= 1e-9 * qn,
            sol.residual - 1e-9 * qn,
            sol.warning.clone(),
        ));
        if spectrum.stable() {
            report.push_check(CheckEntry::scalar(
                "positive_definite",
                sol.positive_definite,
                -sol.min_eig,
                None,
            ));
        }
    }
    if !spectrum.stable() {
        match instability_certificate(&a, &q) {
            Ok(cert) => {
                report.push_check(CheckEntry::scalar(
                    "instability_certificate",
                    cert.min_increase > 0.0,
                    -cert.min_increase,
                    Some(format!("gamma = {:?}", cert.gamma)),
                ));
                report.push_result("instability", &cert)?;
            }
            Err(e) => report.push_check(CheckEntry::scalar(
                "instability_certificate",
                false,
                f64::INFINITY,
                Some(e.to_string()),
            )),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TvSummary {
    terms: usize,
    q_bounds: (f64, f64),
    p_min_eig: f64,
    p_max_eig: f64,
    max_residual: f64,
    samples: Vec<i64>,
}

fn linear_time_varying(cfg: &SystemConfig, opts: &Options, q: &Matrix, report: &mut Report) -> Result<()> {
    let sys = cfg.linear_tv()?;
    let t0s = default_t0_samples(&sys, 0);
    match verify_transition_decay(&sys, &t0s, opts.usize_or("horizon", 64)?) {
        Ok(decay) => {
            report.push_result("transition_decay", &decay)?;
            report.push_check(CheckEntry::scalar("transition_decay", true, -decay.envelope.rate, None));
        }
        Err(e) => {
            report.push_check(CheckEntry::scalar(
                "transition_decay",
                false,
                f64::INFINITY,
                Some(e.to_string()),
            ));
            return Ok(());
        }
    }
    let qc = q.clone();
    let tv = solve_tv_lyapunov(&sys, move |_| qc.clone(), 0, opts.f64_or("tail_tol", 1e-12)?)?;
    let (mut lo, mut hi, mut res) = (f64::INFINITY, 0.0f64, 0.0f64);
    for &t in &t0s {
        let (a, b) = crate::linalg::sym_eig_bounds(&tv.at(t));
        lo = lo.min(a);
        hi = hi.max(b);
        res = res.max(tv.residual(t));
    }
    let tol = 1e-8 * q.norm();
    report.push_result(
        "tv_lyapunov",
        &TvSummary {
            terms: tv.terms(),
            q_bounds: tv.q_bounds(),
            p_min_eig: lo,
            p_max_eig: hi,
            max_residual: res,
            samples: t0s,
        },
    )?;
    report.push_check(CheckEntry::scalar("tv_lyapunov_residual", res <= tol, res - tol, None));
    report.push_check(CheckEntry::scalar("positive_definite", lo > 0.0, -lo, None));
    Ok(())
}

fn cmd_certify_local(cfg: &SystemConfig, seed: u64, report: &mut Report) -> Result<()> {
    let opts = Options::new(cfg.analysis("certify-local"));
    let n = cfg.x_dim;
    let local = LocalOptions {
        domain_radius: opts.f64_or("domain_radius", 1.0)?,
        lipschitz_samples: opts.usize_or("lipschitz_samples", 96)?,
        seed,
    };
    let q = identity_q(&opts, n)?;
    let sys = cfg.dyn_system()?;
    let cert = match cfg.kind {
        SystemKind::Autonomous => certify_local_autonomous(&sys, &q, &local)?,
        SystemKind::Nonautonomous | SystemKind::LinearTv => certify_local_nonautonomous(&sys, move |_| q.clone(), &local)?,
        SystemKind::SlowFast => return Err(unsupported(cfg, "certify-local")),
    };
    report.push_result("local_certificate", &cert)?;
    let conclusive = cert.verdict != Verdict::Inconclusive;
    report.push_check(CheckEntry::scalar(
        "verdict",
        conclusive,
        if conclusive { 0.0 } else { 1.0 },
        cert.reason.clone(),
    ));
    if cert.verdict == Verdict::AsymptoticallyStable {
        let rep = validate_basin(
            &sys,
            &cert,
            opts.usize_or("trials", 200)?,
            opts.usize_or("budget", 200)?,
            seed,
        )?;
        report.push_check(CheckEntry::from_report(None, &rep));
    }
    Ok(())
}

fn converse_options(opts: &Options, seed: u64) -> Result<ConverseOptions> {
    let d = ConverseOptions::default();
    Ok(ConverseOptions {
        radius: opts.f64_or("radius", d.radius)?,
        slow_radius: opts.f64_or("slow_radius", d.slow_radius)?,
        groups: opts.usize_or("groups", d.groups)?,
        per_group: opts.usize_or("per_group", d.per_group)?,
        fit_horizon: opts.usize_or("fit_horizon", d.fit_horizon)?,
        seed,
        l1: opts.f64_opt("l1")?,
        l2: opts.f64_opt("l2")?,
    })
}

fn cmd_converse(cfg: &SystemConfig, seed: u64, report: &mut Report) -> Result<()> {
    let opts = Options::new(cfg.analysis("converse"));
    let copts = converse_options(&opts, seed)?;
    let count = opts.usize_or("samples", 500)?;
    let (cert, dim) = match cfg.kind {
        SystemKind::SlowFast => {
            let sf = cfg.slow_fast()?;
            let cert = match opts.usize_or("finite_time", 0)? {
                0 => {
                    let env = fit_fast_envelope(&sf, &copts)?;
                    build_exponential_converse(&sf, &env, &copts)?
                }
                h => build_finite_time_converse(&sf, h, &copts)?,
            };
            (cert, cfg.y_dim)
        }
        SystemKind::LinearTv => return Err(unsupported(cfg, "converse")),
        kind => {
            let sys = cfg.dyn_system()?.centered()?;
            let mut rng = SeededRng::new(seed ^ 0xc0de);
            let starts: Vec<Vector> = (0..opts.usize_or("starts", 32)?)
                .map(|_| rng.in_ball(cfg.x_dim, copts.radius))
                .collect();
            let times: Vec<i64> = if kind == SystemKind::Autonomous {
                vec![0]
            } else {
                (0..8).collect()
            };
            let mut trajectories = Vec::new();
            for &t0 in &times {
                for tr in simulate_batch(&sys, t0, &starts, copts.fit_horizon) {
                    trajectories.push(tr?);
                }
            }
            let env = fit_exponential_envelope(&trajectories, EnvelopeFitOptions::default())?;
            let cert = if kind == SystemKind::Autonomous {
                build_autonomous_converse(&sys, &env)?
            } else {
                build_nonautonomous_converse(&sys, &env)?
            };
            (cert, cfg.x_dim)
        }
    };
    report.push_result("converse_certificate", &cert)?;
    let samples = converse_samples(&cert, dim, count, seed);
    report.push_reports(&verify_converse(&cert, &samples)?);
    Ok(())
}

/// `V(x)` from an expression, defaulting to `||x||^2`.
fn candidate(expr: Option<Expr>, dim: usize) -> Result<CandidateFunction> {
    match expr {
        Some(e) => CandidateFunction::new(dim, false, move |_, x| e.eval(0.0, x.as_slice(), &[]).unwrap_or(f64::NAN)),
        None => CandidateFunction::quadratic(Matrix::identity(dim, dim)),
    }
}

fn slow_field(cfg: &SystemConfig) -> Result<MapFn> {
    match cfg.kind {
        SystemKind::SlowFast => {
            let sf = cfg.slow_fast()?;
            Ok(Arc::new(move |k, x| sf.reduced_slow(k, x)))
        }
        SystemKind::Autonomous | SystemKind::Nonautonomous => {
            let exprs = cfg.map_x.clone();
            Ok(Arc::new(move |k, x: &Vector| {
                Vector::from_iterator(
                    exprs.len(),
                    exprs.iter().map(|e| e.eval(k as f64, x.as_slice(), &[]).unwrap_or(f64::NAN)),
                )
            }))
        }
        SystemKind::LinearTv => Err(unsupported(cfg, "averaging")),
    }
}

fn averaging_options(opts: &Options, seed: u64) -> Result<AveragingOptions> {
    let d = AveragingOptions::default();
    Ok(AveragingOptions {
        radius: opts.f64_or("radius", d.radius)?,
        probes: opts.usize_or("probes", d.probes)?,
        k_range: opts.i64_or("k_range", d.k_range)?,
        t_list: opts.usize_list_opt("t_list")?.unwrap_or(d.t_list),
        t_max: opts.usize_or("t_max", d.t_max)?,
        eps2_rule: match opts.str_opt("eps2_rule")? {
            None | Some("squared_sum") => Eps2Rule::SquaredSum,
            Some("sum_of_square") => Eps2Rule::SumOfSquare,
            Some(other) => return Err(Error::InvalidArgument(format!("unknown eps2 rule '{other}'"))),
        },
        seed,
        constants: None,
    })
}

fn cmd_averaging(cfg: &SystemConfig, seed: u64, report: &mut Report) -> Result<()> {
    let opts = Options::new(cfg.analysis("averaging"));
    let aopts = averaging_options(&opts, seed)?;
    let phi = slow_field(cfg)?;
    let n = cfg.x_dim;
    let probes = aopts.probe_points(n);
    let states: Vec<Vector> = probes.iter().filter(|p| p.t == 0).map(|p| p.x.clone()).collect();
    let phibar = estimate_average(phi.clone(), &states, aopts.t_max)?;
    let l = estimate_lipschitz(|k, x| phi(k, x), &SampleGrid::from_points(probes.clone()))?;
    let sigma = estimate_sigma(&phibar, &probes, &aopts.t_list, l)?;
    report.push_result("sigma", &sigma)?;
    if let Some(w) = &phibar.warning {
        report.push_result("warning", w)?;
    }

    let mut rng = SeededRng::new(seed ^ 0xd41f);
    let eps_max = opts.f64_or("drift_eps_max", 0.1)?;
    let drift: Vec<DriftSample> = (0..opts.usize_or("drift_samples", 200)?)
        .map(|_| DriftSample {
            k: rng.int_in(0, aopts.k_range.max(1) - 1),
            x: rng.in_ball(n, aopts.radius),
            t: sigma.entries[rng.int_in(0, sigma.entries.len().min(5) as i64 - 1) as usize].0,
            eps: rng.uniform(0.0, eps_max),
        })
        .collect();
    report.push_check(CheckEntry::from_report(
        None,
        &check_drift_remainder(&phibar, &sigma, &drift)?,
    ));

    if let Some(delta) = opts.f64_opt("delta")? {
        report.push_result("budget", &budget_for_delta(delta, &sigma, aopts.eps2_rule)?)?;
    }
    if !opts.bool_or("lyapunov_certificate", true)? {
        return Ok(());
    }
    let v = candidate(opts.expr_opt("lyapunov", cfg, n)?, n)?;
    let cert = build_averaged_lyapunov(&v, phi, n, &aopts)?;
    report.push_check(CheckEntry::from_report(None, &cert.gradient_check));
    report.push_result("averaged_certificate", &cert)?;
    let samples: Vec<(i64, Vector)> = (0..opts.usize_or("verify_samples", 500)?)
        .map(|_| (rng.int_in(0, 63), rng.in_ball(n, aopts.radius)))
        .collect();
    let eps: Vec<f64> = (1..=5).map(|i| cert.eps_c * i as f64 / 6.0).collect();
    report.push_reports(&verify_averaged(&cert, &samples, &eps)?);
    Ok(())
}

fn cmd_timescales(cfg: &SystemConfig, seed: u64, report: &mut Report) -> Result<()> {
    if cfg.kind != SystemKind::SlowFast {
        return Err(unsupported(cfg, "timescales"));
    }
    let opts = Options::new(cfg.analysis("timescales"));
    let sf = cfg.slow_fast()?;
    let r = opts.f64_or("r", 1.0)?;
    let topts = TimescaleOptions {
        converse: converse_options(&opts, seed)?,
        averaging: averaging_options(&opts, seed)?,
        ell_samples: opts.usize_or("ell_samples", 400)?,
        seed,
        radius_rounds: opts.usize_or("radius_rounds", 4)?,
    };
    let v = candidate(opts.expr_opt("lyapunov", cfg, cfg.x_dim)?, cfg.x_dim)?;
    let cert = certify_semiglobal(&sf, r, &v, &topts)?;
    report.push_result("composite_certificate", &cert)?;

    let samples = pair_samples(
        cfg.x_dim,
        cfg.y_dim,
        cert.ell.r0,
        opts.usize_or("verify_samples", 1000)?,
        seed ^ 0x5a3,
    );
    let eps = [cert.eps_r / 4.0, cert.eps_r / 2.0, 0.99 * cert.eps_r];
    report.push_reports(&verify_composite(&sf, &cert, &samples, &eps)?);
    let rate = validate_rate(
        &sf,
        &cert,
        &[cert.eps_r / 4.0, cert.eps_r / 2.0],
        opts.usize_or("trials", 100)?,
        opts.usize_or("horizon", 200)?,
        seed ^ 0x7a7e,
    )?;
    report.push_check(CheckEntry::from_report(Some("rate_validation"), &rate));
    if opts.bool_or("global", false)? {
        let rep = check_global_hypotheses(&sf, 1e3, 6, 64, seed)?;
        report.push_check(CheckEntry::from_report(None, &rep));
    }
    Ok(())
}
