//! Composite Lyapunov certificates `U = V' + W` for slow/fast systems.

use serde::Serialize;

use crate::averaging::{build_averaged_lyapunov, AveragedCertificate, AveragingOptions};
use crate::certcheck::{tolerance, CandidateFunction, Condition, ConditionReport, Requirement};
use crate::converse::{build_exponential_converse, fit_fast_envelope, ConverseCertificate, ConverseOptions, SAFETY};
use crate::dynsys::{DynSystem, SlowFastSystem};
use crate::error::StageExt;
use crate::linalg::sym_eig_bounds;
use crate::rng::SeededRng;
use crate::{par, Error, Matrix, Result, Vector};

/// Step size at which the `y*` displacement ratio is measured.
pub const ELL4_EPS: f64 = 1e-3;

/// Combined map over `z = (x, y')` with `y' = y - y*(x)`.
pub fn shift_to_error_coordinates(sys: &SlowFastSystem) -> Result<DynSystem> {
    let n = sys.slow_dim();
    let s = sys.clone();
    DynSystem::new(n + sys.fast_dim(), false, move |k, z| {
        let x = z.rows(0, n).into_owned();
        let yp = z.rows(n, z.len() - n).into_owned();
        let (xp, ypp) = error_step(&s, k, &x, &yp);
        let mut out = Vector::zeros(z.len());
        out.rows_mut(0, n).copy_from(&xp);
        out.rows_mut(n, z.len() - n).copy_from(&ypp);
        out
    })
}

/// One step of the error-coordinate dynamics at the system's `eps`.
fn error_step(sys: &SlowFastSystem, k: i64, x: &Vector, yp: &Vector) -> (Vector, Vector) {
    let ys = sys.ystar(x);
    let y = yp + &ys;
    let xp = x + sys.phi(k, x, &y) * sys.epsilon();
    let ypp = sys.varphi(k, &y, x) - sys.ystar(&xp);
    (xp, ypp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllConstants {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub r_bar: f64,
    pub r_tilde: f64,
    pub r0: f64,
}

/// One `(k, x, y')` sample.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub k: i64,
    pub x: Vector,
    pub yp: Vector,
}

/// Random samples in the `(x, y')` ball plus the signed coordinate axes.
pub fn pair_samples(n: usize, m: usize, radius: f64, count: usize, seed: u64) -> Vec<PairSample> {
    let mut rng = SeededRng::new(seed);
    let split = |z: Vector| (z.rows(0, n).into_owned(), z.rows(n, m).into_owned());
    let mut zs = vec![Vector::zeros(n + m)];
    for i in 0..n + m {
        let mut e = Vector::zeros(n + m);
        e[i] = radius;
        zs.push(-&e);
        zs.push(e);
    }
    while zs.len() < count.max(1) {
        zs.push(rng.in_ball(n + m, radius));
    }
    zs.into_iter()
        .map(|z| {
            let (x, yp) = split(z);
            PairSample {
                k: rng.int_in(0, 63),
                x,
                yp,
            }
        })
        .collect()
}

fn ratios(sys: &SlowFastSystem, s: &PairSample) -> [Option<f64>; 4] {
    let (nx, ny) = (s.x.norm(), s.yp.norm());
    let ys = sys.ystar(&s.x);
    let phi1 = sys.phi(s.k, &s.x, &ys);
    let full = sys.phi(s.k, &s.x, &(&s.yp + &ys));
    let l1 = (nx > 0.0).then(|| phi1.norm() / nx);
    let l2 = (ny > 0.0).then(|| (&full - &phi1).norm() / ny);
    let l3 = (ny > 0.0).then(|| sys.shifted_fast(s.k, &s.yp, &s.x).norm() / ny);
    let nf = full.norm();
    let l4 = (nf > 0.0).then(|| {
        let moved = sys.ystar(&(&s.x + &full * ELL4_EPS));
        (moved - ys).norm() / (ELL4_EPS * nf)
    });
    [l1, l2, l3, l4]
}

/// Sampled maxima of the four defining ratios, times [`SAFETY`].
pub fn estimate_ell_constants(sys: &SlowFastSystem, r0: f64, samples: &[PairSample]) -> Result<EllConstants> {
    let rows = par::map(samples, |s| ratios(sys, s));
    let max_of = |i: usize| -> Option<f64> {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[i]).collect();
        (!vals.is_empty()).then(|| SAFETY * vals.into_iter().fold(0.0, f64::max))
    };
    let need = |i: usize, name: &str| {
        max_of(i).ok_or_else(|| Error::Inapplicable(format!("{name}: every sample has a vanishing denominator")))
    };
    let r_tilde = samples.iter().map(|s| sys.ystar(&s.x).norm()).fold(0.0, f64::max);
    Ok(EllConstants {
        l1: need(0, "l1")?,
        l2: need(1, "l2")?,
        l3: need(2, "l3")?,
        l4: max_of(3).unwrap_or(0.0),
        r_bar: r0,
        r_tilde,
        r0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficients {
    #[serde(rename = "vA1")]
    pub v_a1: f64,
    #[serde(rename = "vB1")]
    pub v_b1: f64,
    #[serde(rename = "vB2")]
    pub v_b2: f64,
    #[serde(rename = "vC1")]
    pub v_c1: f64,
    #[serde(rename = "wA1")]
    pub w_a1: f64,
    #[serde(rename = "wB1")]
    pub w_b1: f64,
    #[serde(rename = "wB2")]
    pub w_b2: f64,
    #[serde(rename = "wC1")]
    pub w_c1: f64,
    #[serde(rename = "wC2")]
    pub w_c2: f64,
    #[serde(rename = "wC3")]
    pub w_c3: f64,
}

impl Coefficients {
    /// `[[A_V+A_W, (B_V+B_W)/2], [., C_V+C_W]]`.
    pub fn q_u(&self, eps: f64) -> Matrix {
        let e2 = eps * eps;
        let a = -eps * self.v_a1 + e2 * self.w_a1;
        let b = eps * (self.v_b1 + self.w_b1) + e2 * (self.v_b2 + self.w_b2);
        let c = e2 * self.v_c1 - self.w_c1 + eps * self.w_c2 + e2 * self.w_c3;
        Matrix::from_row_slice(2, 2, &[a, 0.5 * b, 0.5 * b, c])
    }

    pub fn negative_definite(&self, eps: f64) -> bool {
        let q = self.q_u(eps);
        q[(0, 0)] < 0.0 && q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)] > 0.0
    }
}

/// Slow constants `a1..a4`, fast constants `b1..b5` (missing `b5` drops
/// its terms) and `l1..l4`.
pub fn assemble_coefficients(slow: &AveragedCertificate, fast: &ConverseCertificate, ell: &EllConstants) -> Coefficients {
    let a = &slow.constants;
    let b = &fast.constants;
    let b5 = b.a5.unwrap_or(0.0);
    let EllConstants {
        l1,
        l2,
        l3,
        l4,
        r_bar,
        r_tilde,
        ..
    } = *ell;
    let spread = r_bar + r_tilde;
    Coefficients {
        v_a1: a.a3,
        v_b1: 2.0 * a.a4 * l2,
        v_b2: 2.0 * a.a4 * l2 * l1,
        v_c1: a.a4 * l2 * l2,
        w_a1: b.a4 * l4 * l4 * l1 * l1,
        w_b1: 2.0 * b.a4 * l4 * l1 * l3 + b5 * l1 * l3 * l3 * spread,
        w_b2: 2.0 * b.a4 * l4 * l4 * l1 * l2,
        w_c1: b.a3,
        w_c2: 2.0 * b.a4 * l4 * l2 * l3 + b5 * l2 * l3 * l3 * spread,
        w_c3: b.a4 * l4 * l4 * l2 * l2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsSearch {
    /// Largest step size with `Q_U` negative definite on the whole grid below it.
    pub eps_star: f64,
    pub eps_r: f64,
    pub ell_u: f64,
}

const GRID_POINTS: usize = 241;

fn eps_grid() -> Vec<f64> {
    (0..GRID_POINTS)
        .map(|i| 10f64.powf(-12.0 + 12.0 * i as f64 / (GRID_POINTS - 1) as f64))
        .collect()
}

/// Grid plus bisection for `eps*`, then `eps_r = min(eps_c, eps*/2)` and
/// `ell_U = min -lambda_max(Q_U(eps)) / eps` over grid points up to `eps_r`.
pub fn find_eps_r(coeffs: &Coefficients, eps_c: f64) -> Result<EpsSearch> {
    if !(coeffs.v_a1 > 0.0) {
        return Err(Error::NotCertifiable("vA1 must be positive".into()));
    }
    if !(coeffs.w_c1 > 0.0) {
        return Err(Error::NotCertifiable("wC1 must be positive".into()));
    }
    let grid = eps_grid();
    let last = grid.iter().take_while(|&&e| coeffs.negative_definite(e)).count();
    if last == 0 {
        return Err(Error::NotCertifiable("Q_U is not negative definite at eps = 1e-12".into()));
    }
    let mut lo = grid[last - 1];
    if last < grid.len() {
        let mut hi = grid[last];
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if coeffs.negative_definite(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let eps_star = lo;
    let eps_r = eps_c.min(0.5 * eps_star);
    let rate = |e: f64| -sym_eig_bounds(&coeffs.q_u(e)).1 / e;
    let ell_u = grid
        .iter()
        .copied()
        .filter(|&e| e <= eps_r)
        .chain(std::iter::once(eps_r))
        .map(rate)
        .fold(f64::INFINITY, f64::min);
    if !(ell_u > 0.0) {
        return Err(Error::NotCertifiable(format!("ell_U = {ell_u:e} is not positive")));
    }
    Ok(EpsSearch { eps_star, eps_r, ell_u })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterLipschitz {
    /// `b5` taken from the fast converse certificate.
    Certified,
    /// No `b5` available; its terms were dropped.
    Unverified,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompositeCertificate {
    pub r: f64,
    pub fast_cert: ConverseCertificate,
    pub slow_cert: AveragedCertificate,
    pub ell: EllConstants,
    pub alpha: f64,
    pub beta: f64,
    pub coeffs: Coefficients,
    pub eps_star: f64,
    pub eps_r: f64,
    pub ell_u: f64,
    pub gamma_r: f64,
    /// `ell_U * max(1/c1, 1/b1)` as printed in the source.
    pub gamma_r_formula: f64,
    pub c_r: f64,
    pub parameter_lipschitz: ParameterLipschitz,
    /// Radius on which the fast and slow certificates were built.
    pub working_radius: f64,
    pub notes: Vec<String>,
}

impl CompositeCertificate {
    /// `U(k, x, y') = V'(k, x) + W(k, y', x)` at step size `eps`.
    pub fn evaluate(&self, k: i64, x: &Vector, yp: &Vector, eps: f64) -> f64 {
        self.slow_cert.evaluate(k, x, eps) + self.fast_cert.evaluate(k, yp, Some(x))
    }

    pub fn q_u(&self, eps: f64) -> Matrix {
        self.coeffs.q_u(eps)
    }
}

#[derive(Debug, Clone)]
pub struct TimescaleOptions {
    pub converse: ConverseOptions,
    pub averaging: AveragingOptions,
    pub ell_samples: usize,
    pub seed: u64,
    /// Attempts at growing the working radius to cover `r0`.
    pub radius_rounds: usize,
}

impl Default for TimescaleOptions {
    fn default() -> Self {
        Self {
            converse: ConverseOptions::default(),
            averaging: AveragingOptions::default(),
            ell_samples: 400,
            seed: 0,
            radius_rounds: 4,
        }
    }
}

/// Fast converse certificate, averaged slow certificate, `l`-constants on the
/// `r0` ball, coefficient assembly and the `eps_r` search.
pub fn certify_semiglobal(
    sys: &SlowFastSystem,
    r: f64,
    v_slow: &CandidateFunction,
    opts: &TimescaleOptions,
) -> Result<CompositeCertificate> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("r must be positive, got {r}")));
    }
    let n = sys.slow_dim();
    let origin_drift = (0..4)
        .map(|k| sys.reduced_slow(k, &Vector::zeros(n)).norm())
        .fold(0.0, f64::max);
    if origin_drift > tolerance(0.0) {
        return Err(Error::Inapplicable(format!(
            "phi(k, 0, y*(0)) = {origin_drift:e} is not zero"
        )));
    }
    let slow_sys = sys.clone();
    let phi1: crate::dynsys::MapFn = std::sync::Arc::new(move |k, x| slow_sys.reduced_slow(k, x));

    let mut radius = r;
    let mut built = None;
    for _ in 0..opts.radius_rounds.max(1) {
        let copts = ConverseOptions {
            radius,
            slow_radius: radius,
            seed: opts.seed ^ opts.converse.seed,
            ..opts.converse
        };
        let env = fit_fast_envelope(sys, &copts).stage("fast converse")?;
        let fast = build_exponential_converse(sys, &env, &copts).stage("fast converse")?;
        let aopts = AveragingOptions {
            radius,
            seed: opts.seed ^ opts.averaging.seed,
            ..opts.averaging.clone()
        };
        let slow = build_averaged_lyapunov(v_slow, phi1.clone(), n, &aopts).stage("averaging")?;
        let alpha = slow.constants.a1.min(fast.constants.a1);
        let beta = slow.constants.a2.max(fast.constants.a2);
        let r0 = r * beta / alpha;
        let done = r0 <= radius * (1.0 + 1e-12);
        built = Some((fast, slow, alpha, beta, r0, radius));
        if done {
            break;
        }
        radius = r0;
    }
    let (fast, slow, alpha, beta, r0, working_radius) = built.expect("at least one round");
    if r0 > working_radius * (1.0 + 1e-12) {
        return Err(Error::NotCertifiable(format!(
            "r0 = {r0:e} keeps outgrowing the working radius {working_radius:e}"
        )));
    }

    let samples = pair_samples(n, sys.fast_dim(), r0, opts.ell_samples, opts.seed ^ 0xe11);
    let ell = estimate_ell_constants(sys, r0, &samples).stage("ell constants")?;
    let coeffs = assemble_coefficients(&slow, &fast, &ell);
    let search = find_eps_r(&coeffs, slow.eps_c).stage("eps search")?;
    let parameter_lipschitz = if fast.constants.a5.is_some() {
        ParameterLipschitz::Certified
    } else {
        ParameterLipschitz::Unverified
    };
    let mut notes = vec![
        "gamma_r = ell_U / beta; the printed ell_U * max(1/c1, 1/b1) is kept as gamma_r_formula".to_string(),
        "l4 multiplies the y* displacement terms of the W1 bound".to_string(),
        "r_bar bound on ||y'|| enforced by restricting samples to the r0 ball".to_string(),
    ];
    if parameter_lipschitz == ParameterLipschitz::Unverified {
        notes.push("parameter-Lipschitz unverified: b5 terms dropped".to_string());
    }
    if let Some(w) = &slow.warning {
        notes.push(w.clone());
    }
    let gamma_r = search.ell_u / beta;
    Ok(CompositeCertificate {
        r,
        gamma_r_formula: search.ell_u * (1.0 / slow.base_constants.c1).max(1.0 / fast.constants.a1),
        c_r: beta * r * r / alpha,
        alpha,
        beta,
        coeffs,
        eps_star: search.eps_star,
        eps_r: search.eps_r,
        ell_u: search.ell_u,
        gamma_r,
        ell,
        parameter_lipschitz,
        working_radius,
        notes,
        fast_cert: fast,
        slow_cert: slow,
    })
}

/// Sandwich, `dU <= z^T Q_U z` and `dU <= -eps gamma_r U` at every sample and
/// step size, with `z = (||x||, ||y'||)`.
pub fn verify_composite(
    sys: &SlowFastSystem,
    cert: &CompositeCertificate,
    samples: &[PairSample],
    eps_values: &[f64],
) -> Result<Vec<ConditionReport>> {
    if samples.is_empty() || eps_values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut systems = Vec::with_capacity(eps_values.len());
    for &e in eps_values {
        systems.push(sys.with_epsilon(e)?);
    }
    let pairs: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|i| (0..eps_values.len()).map(move |j| (i, j)))
        .collect();
    let rows = par::map(&pairs, |&(i, j)| {
        let s = &samples[i];
        let eps = eps_values[j];
        let (nx, ny) = (s.x.norm(), s.yp.norm());
        let u = cert.evaluate(s.k, &s.x, &s.yp, eps);
        let (xp, ypp) = error_step(&systems[j], s.k, &s.x, &s.yp);
        let du = cert.evaluate(s.k + 1, &xp, &ypp, eps) - u;
        let z2 = nx * nx + ny * ny;
        let q = cert.q_u(eps);
        let quad = q[(0, 0)] * nx * nx + 2.0 * q[(0, 1)] * nx * ny + q[(1, 1)] * ny * ny;
        let tol = tolerance(u);
        (
            (cert.alpha * z2 - u).max(u - cert.beta * z2) - tol,
            du - quad - tol,
            du + eps * cert.gamma_r * u - tol,
        )
    });
    let pick = |f: fn(&(f64, f64, f64)) -> f64| -> Vec<(f64, i64, Vector)> {
        rows.iter()
            .zip(&pairs)
            .map(|(r, &(i, _))| {
                let s = &samples[i];
                let mut z = Vector::zeros(s.x.len() + s.yp.len());
                z.rows_mut(0, s.x.len()).copy_from(&s.x);
                z.rows_mut(s.x.len(), s.yp.len()).copy_from(&s.yp);
                (f(r), s.k, z)
            })
            .collect()
    };
    let report = |cond, f| {
        let owned = pick(f);
        let refs: Vec<(f64, i64, &Vector)> = owned.iter().map(|(m, k, z)| (*m, *k, z)).collect();
        ConditionReport::from_margins(cond, Requirement::NonPositive, &refs)
    };
    Ok(vec![
        report(Condition::Sandwich, |r| r.0),
        report(Condition::QuadraticDomination, |r| r.1),
        report(Condition::Rate, |r| r.2),
    ])
}

/// Monte-Carlo check of `||x(k)||^2 <= C_r (1 - eps gamma_r)^k` from random
/// starts with `||x0||^2 + ||y0 - y*(x0)||^2 < r^2`. Step sizes outside
/// `(0, eps_r)` are simulated but not counted.
pub fn validate_rate(
    sys: &SlowFastSystem,
    cert: &CompositeCertificate,
    eps_grid: &[f64],
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<ConditionReport> {
    let (n, m) = (sys.slow_dim(), sys.fast_dim());
    let mut rng = SeededRng::new(seed);
    let starts: Vec<Vector> = (0..trials)
        .map(|i| {
            if i == 0 {
                Vector::zeros(n + m)
            } else {
                rng.in_ball(n + m, cert.r * (1.0 - 1e-12))
            }
        })
        .collect();
    let mut inside = Vec::new();
    let mut outside = 0usize;
    let mut outside_violations = 0usize;
    for &eps in eps_grid {
        let s = sys.with_epsilon(eps)?;
        let runs = par::map(&starts, |z0| -> (f64, Vector) {
            let mut x = z0.rows(0, n).into_owned();
            let mut yp = z0.rows(n, m).into_owned();
            let mut worst = f64::NEG_INFINITY;
            for k in 0..=horizon {
                let bound = cert.c_r * (1.0 - eps * cert.gamma_r).powi(k as i32);
                let v = x.norm_squared();
                let margin = v - bound - tolerance(bound);
                if margin.is_nan() {
                    worst = f64::INFINITY;
                    break;
                }
                worst = worst.max(margin);
                if k < horizon {
                    let (a, b) = error_step(&s, k as i64, &x, &yp);
                    x = a;
                    yp = b;
                }
            }
            (worst, z0.clone())
        });
        if eps > 0.0 && eps < cert.eps_r {
            inside.extend(runs);
        } else {
            outside += runs.len();
            outside_violations += runs.iter().filter(|r| r.0 > 0.0).count();
        }
    }
    let note = (outside > 0).then(|| {
        format!("{outside} out-of-certificate runs (eps outside (0, eps_r)) not counted; {outside_violations} exceeded the bound")
    });
    if inside.is_empty() {
        return Ok(ConditionReport::vacuous(
            Condition::Rate,
            note.unwrap_or_else(|| "no step size inside (0, eps_r)".into()),
        ));
    }
    let refs: Vec<(f64, i64, &Vector)> = inside.iter().map(|(m, z)| (*m, 0, z)).collect();
    let rep = ConditionReport::from_margins(Condition::Rate, Requirement::NonPositive, &refs);
    Ok(match note {
        Some(n) => rep.with_note(n),
        None => rep,
    })
}

/// Shell-by-shell `l`-ratios on radii up to `max_radius`, using the same
/// directions on every shell; passes iff no shell exceeds the innermost.
pub fn check_global_hypotheses(
    sys: &SlowFastSystem,
    max_radius: f64,
    shells: usize,
    per_shell: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if shells < 2 || !(max_radius > 0.0) {
        return Err(Error::InvalidArgument(
            "need at least two shells and a positive radius".into(),
        ));
    }
    let (n, m) = (sys.slow_dim(), sys.fast_dim());
    let unit = pair_samples(n, m, 1.0, per_shell, seed);
    let radii: Vec<f64> = (0..shells)
        .map(|i| max_radius * 1e-3f64.powf(1.0 - i as f64 / (shells - 1) as f64))
        .collect();
    let per_shell_max: Vec<[f64; 4]> = radii
        .iter()
        .map(|&r| {
            let rows = par::map(&unit, |s| {
                ratios(
                    sys,
                    &PairSample {
                        k: s.k,
                        x: &s.x * r,
                        yp: &s.yp * r,
                    },
                )
            });
            let mut best = [0.0f64; 4];
            for row in rows {
                for (b, v) in best.iter_mut().zip(row) {
                    if let Some(v) = v {
                        *b = b.max(if v.is_nan() { f64::INFINITY } else { v });
                    }
                }
            }
            best
        })
        .collect();
    let base = per_shell_max[0];
    let witnesses: Vec<Vector> = radii.iter().map(|&r| Vector::from_element(1, r)).collect();
    let rows: Vec<(f64, i64, &Vector)> = per_shell_max
        .iter()
        .zip(&witnesses)
        .map(|(ls, w)| {
            let m = ls
                .iter()
                .zip(&base)
                .map(|(l, b)| l - b * (1.0 + 1e-6) - 1e-12)
                .fold(f64::NEG_INFINITY, f64::max);
            (m, 0, w)
        })
        .collect();
    let rep = ConditionReport::from_margins(Condition::GlobalHypotheses, Requirement::NonPositive, &rows);
    Ok(if base.iter().all(|&l| l == 0.0) && rep.passed {
        rep.with_note("all ratios vanish")
    } else if rep.passed {
        rep.with_note("global (sampled evidence)")
    } else {
        rep
    })
}
