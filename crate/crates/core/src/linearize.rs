//! Linearisation at an equilibrium: numerical Jacobians, the indirect
//! method and explicit certified basin radii.

use serde::Serialize;

use crate::certcheck::{Condition, ConditionReport, Requirement};
use crate::converse::SAFETY;
use crate::dynsys::{DynSystem, LinearTV};
use crate::linalg::{central_jacobian, is_finite, operator_norm, positive_root, sym_eig_bounds};
use crate::rng::SeededRng;
use crate::stein::{
    check_pd, classify_linear, instability_certificate, ser_matrix, solve_stein_kron, solve_tv_lyapunov, InstabilityCertificate,
    SpectrumReport, TOL_MARGIN,
};
use crate::{par, Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Serialize)]
pub struct JacobianEstimate {
    #[serde(serialize_with = "ser_matrix")]
    pub a: Matrix,
    pub fd_step: f64,
    /// Largest entry difference between steps `h` and `h/2`.
    pub truncation_error_estimate: f64,
}

pub fn numerical_jacobian(sys: &DynSystem, t: i64, x: &Vector) -> Result<JacobianEstimate> {
    let h = (1e-6 * x.norm()).max(1e-6);
    let f = |z: &Vector| sys.eval(t, z);
    let a = central_jacobian(f, x, h);
    let a2 = central_jacobian(f, x, h / 2.0);
    if a.iter().chain(a2.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite Jacobian at t={t}")));
    }
    Ok(JacobianEstimate {
        truncation_error_estimate: (&a - &a2).amax(),
        a,
        fd_step: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AsymptoticallyStable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalCertificate {
    #[serde(serialize_with = "ser_matrix")]
    pub a: Matrix,
    #[serde(serialize_with = "ser_matrix")]
    pub p: Matrix,
    #[serde(serialize_with = "ser_matrix")]
    pub q: Matrix,
    pub p1: f64,
    pub p2: f64,
    pub q1: f64,
    pub q2: f64,
    pub gamma_star: f64,
    /// Sampled row-wise Lipschitz constant of the Jacobian.
    pub l1: f64,
    /// Bound on `||A(t)||` entering the cross term, at least 1.
    pub b_a: f64,
    pub delta_bar: f64,
    pub domain_radius: f64,
    pub verdict: Verdict,
    pub reason: Option<String>,
    pub spectrum: Option<SpectrumReport>,
    pub instability: Option<InstabilityCertificate>,
}

impl LocalCertificate {
    /// `-q1 + 2 p2 B_A gamma + p2 gamma^2`.
    pub fn parabola(&self, gamma: f64) -> f64 {
        -self.q1 + 2.0 * self.p2 * self.b_a * gamma + self.p2 * gamma * gamma
    }

    /// `sqrt(n) L1`, the constant in `||g(x)|| <= sqrt(n) L1 ||x||^2`.
    pub fn remainder_gain(&self) -> f64 {
        (self.a.nrows() as f64).sqrt() * self.l1
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LocalOptions {
    /// Radius of the declared domain `D`; the certified ball stays inside.
    pub domain_radius: f64,
    /// Samples per Jacobian-Lipschitz round.
    pub lipschitz_samples: usize,
    pub seed: u64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            domain_radius: 1.0,
            lipschitz_samples: 96,
            seed: 0,
        }
    }
}

/// Largest `||J_i(x) - J_i(y)|| / ||x - y||` over rows and sampled pairs in
/// a ball, times [`SAFETY`].
fn jacobian_lipschitz(sys: &DynSystem, times: &[i64], radius: f64, opts: &LocalOptions) -> Result<f64> {
    let n = sys.dim();
    let mut rng = SeededRng::new(opts.seed ^ 0x1a2b);
    let mut pts = vec![Vector::zeros(n)];
    for i in 0..n {
        let mut e = Vector::zeros(n);
        e[i] = radius;
        pts.push(-&e);
        pts.push(e);
    }
    while pts.len() < opts.lipschitz_samples.max(2) {
        pts.push(rng.in_ball(n, radius));
    }
    let mut best: f64 = 0.0;
    for &t in times {
        let jacs = par::map(&pts, |x| numerical_jacobian(sys, t, x).map(|j| j.a));
        let jacs: Vec<Matrix> = jacs.into_iter().collect::<Result<_>>()?;
        let rows = par::map_range(pts.len(), |i| {
            let mut b: f64 = 0.0;
            for j in i + 1..pts.len() {
                let d = (&pts[i] - &pts[j]).norm();
                if d == 0.0 {
                    continue;
                }
                let diff = &jacs[i] - &jacs[j];
                for r in 0..n {
                    b = b.max(diff.row(r).norm() / d);
                }
            }
            b
        });
        best = rows.into_iter().fold(best, f64::max);
    }
    Ok(SAFETY * best)
}

/// Two rounds of box shrinking; the larger estimate is kept.
fn certified_radius(sys: &DynSystem, times: &[i64], gamma_star: f64, opts: &LocalOptions) -> Result<(f64, f64)> {
    let sqrt_n = (sys.dim() as f64).sqrt();
    let radius_for = |l: f64| {
        if l > 0.0 {
            (gamma_star / (sqrt_n * l)).min(opts.domain_radius)
        } else {
            opts.domain_radius
        }
    };
    let l_first = jacobian_lipschitz(sys, times, opts.domain_radius, opts)?;
    let l_second = jacobian_lipschitz(sys, times, radius_for(l_first), opts)?;
    let l1 = l_first.max(l_second);
    Ok((l1, radius_for(l1)))
}

fn inconclusive(a: Matrix, q: Matrix, domain_radius: f64, reason: String, spectrum: Option<SpectrumReport>) -> LocalCertificate {
    let n = a.nrows();
    let (q1, q2) = sym_eig_bounds(&q);
    LocalCertificate {
        a,
        p: Matrix::zeros(n, n),
        q,
        p1: 0.0,
        p2: 0.0,
        q1,
        q2,
        gamma_star: 0.0,
        l1: 0.0,
        b_a: 1.0,
        delta_bar: 0.0,
        domain_radius,
        verdict: Verdict::Inconclusive,
        reason: Some(reason),
        spectrum,
        instability: None,
    }
}

/// Indirect method for `x+ = f(x)`: Schur linearisation gives a ball of
/// certified asymptotic stability, an eigenvalue outside the unit circle
/// gives an instability certificate.
pub fn certify_local_autonomous(sys: &DynSystem, q: &Matrix, opts: &LocalOptions) -> Result<LocalCertificate> {
    let sys = sys.centered()?;
    check_pd(q)?;
    let a = numerical_jacobian(&sys, 0, &Vector::zeros(sys.dim()))?.a;
    let spectrum = classify_linear(&a)?;
    if spectrum.schur {
        let sol = solve_stein_kron(&a, q)?;
        let (q1, q2) = sym_eig_bounds(q);
        let b_a = operator_norm(&a).max(1.0);
        let gamma_star = positive_root(sol.max_eig, 2.0 * sol.max_eig * b_a, -q1)
            .ok_or_else(|| Error::Numerical("parabola has no positive root".into()))?;
        let (l1, delta_bar) = certified_radius(&sys, &[0], gamma_star, opts)?;
        return Ok(LocalCertificate {
            a,
            p: sol.p,
            q: q.clone(),
            p1: sol.min_eig,
            p2: sol.max_eig,
            q1,
            q2,
            gamma_star,
            l1,
            b_a,
            delta_bar,
            domain_radius: opts.domain_radius,
            verdict: Verdict::AsymptoticallyStable,
            reason: None,
            spectrum: Some(spectrum),
            instability: None,
        });
    }
    if spectrum.spectral_radius > 1.0 + TOL_MARGIN {
        let inst = instability_certificate(&a, q)?;
        let mut cert = inconclusive(a, q.clone(), opts.domain_radius, String::new(), Some(spectrum));
        cert.p = inst.p1.clone();
        cert.verdict = Verdict::Unstable;
        cert.reason = Some("linearisation has an eigenvalue outside the unit circle".into());
        cert.instability = Some(inst);
        return Ok(cert);
    }
    Ok(inconclusive(
        a,
        q.clone(),
        opts.domain_radius,
        "linearisation has eigenvalues on the unit circle".into(),
        Some(spectrum),
    ))
}

const TV_SAMPLES: i64 = 16;

/// Indirect method for `x(t+1) = f(t, x)` through the time-varying
/// Lyapunov equation of the Jacobians `A(t)`.
pub fn certify_local_nonautonomous<Q>(sys: &DynSystem, qgen: Q, opts: &LocalOptions) -> Result<LocalCertificate>
where
    Q: Fn(i64) -> Matrix + Send + Sync + Clone + 'static,
{
    let sys = sys.centered()?;
    let n = sys.dim();
    let zero = Vector::zeros(n);
    let js = sys.clone();
    let jac = move |t: i64| {
        numerical_jacobian(&js, t, &Vector::zeros(js.dim()))
            .map(|j| j.a)
            .unwrap_or_else(|_| Matrix::from_element(js.dim(), js.dim(), f64::NAN))
    };
    for t in 0..TV_SAMPLES {
        numerical_jacobian(&sys, t, &zero)?;
    }
    let a0 = jac(0);
    let q0 = qgen(0);
    let ltv = LinearTV::new(n, jac.clone(), None)?;
    let tv = match solve_tv_lyapunov(&ltv, qgen.clone(), 0, 1e-12) {
        Ok(tv) => tv,
        Err(e) => return Ok(inconclusive(a0, q0, opts.domain_radius, e.to_string(), None)),
    };
    let (mut p1, mut p2, mut q1, mut q2, mut b_a) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64, 1.0f64);
    for t in 0..TV_SAMPLES {
        let (lo, hi) = sym_eig_bounds(&tv.at(t));
        p1 = p1.min(lo);
        p2 = p2.max(hi);
        let (lo, hi) = sym_eig_bounds(&qgen(t));
        q1 = q1.min(lo);
        q2 = q2.max(hi);
        b_a = b_a.max(operator_norm(&jac(t)));
    }
    if !(p1 > 0.0) {
        return Ok(inconclusive(
            a0,
            q0,
            opts.domain_radius,
            "P(t) is not uniformly positive definite".into(),
            None,
        ));
    }
    let gamma_star =
        positive_root(p2, 2.0 * p2 * b_a, -q1).ok_or_else(|| Error::Numerical("parabola has no positive root".into()))?;
    let times: Vec<i64> = (0..TV_SAMPLES).collect();
    let (l1, delta_bar) = certified_radius(&sys, &times, gamma_star, opts)?;
    Ok(LocalCertificate {
        p: tv.at(0),
        a: a0,
        q: q0,
        p1,
        p2,
        q1,
        q2,
        gamma_star,
        l1,
        b_a,
        delta_bar,
        domain_radius: opts.domain_radius,
        verdict: Verdict::AsymptoticallyStable,
        reason: None,
        spectrum: None,
        instability: None,
    })
}

/// Simulates `trials` starts drawn uniformly in the certified ball and
/// requires each to reach `1e-10 * delta_bar` within `budget` steps.
pub fn validate_basin(
    sys: &DynSystem,
    cert: &LocalCertificate,
    trials: usize,
    budget: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if cert.verdict != Verdict::AsymptoticallyStable {
        return Err(Error::Inapplicable("certificate does not claim asymptotic stability".into()));
    }
    if trials == 0 {
        return Ok(ConditionReport::vacuous(Condition::Basin, "no trials requested"));
    }
    let sys = sys.centered()?;
    let mut rng = SeededRng::new(seed);
    let starts: Vec<Vector> = (0..trials).map(|_| rng.in_ball(sys.dim(), cert.delta_bar)).collect();
    let target = 1e-10 * cert.delta_bar;
    let finals = par::map(&starts, |x0| {
        let mut x = x0.clone();
        for t in 0..budget {
            let nx = x.norm();
            if nx <= target {
                return nx - target;
            }
            x = sys.eval(t as i64, &x);
            if !is_finite(&x) || x.norm() > 1e12 {
                return f64::INFINITY;
            }
        }
        x.norm() - target
    });
    let margins: Vec<_> = finals.iter().zip(&starts).map(|(m, x)| (*m, 0, x)).collect();
    Ok(ConditionReport::from_margins(
        Condition::Basin,
        Requirement::NonPositive,
        &margins,
    ))
}
