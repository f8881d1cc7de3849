//! Converse Lyapunov functions built as finite sums of squared trajectory
//! norms, with explicit constants and sampled verification.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::certcheck::{tolerance, Condition, ConditionReport, Requirement, SampleGrid, SamplePoint};
use crate::dynsys::{fit_exponential_envelope, DynSystem, EnvelopeFitOptions, ExponentialEnvelope, SlowFastSystem, Trajectory};
use crate::linalg::{central_jacobian, operator_norm};
use crate::rng::SeededRng;
use crate::{par, Error, Result, Vector};

/// Safety factor applied to every sampled Lipschitz constant.
pub const SAFETY: f64 = 1.1;

/// One step `(k, state, frozen x) -> state(k+1)` of the summed dynamics.
pub type StepFn = Arc<dyn Fn(i64, &Vector, &Vector) -> Vector + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConverseKind {
    Autonomous,
    Nonautonomous,
    FiniteTime,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConverseConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: Option<f64>,
}

#[derive(Clone, Serialize)]
pub struct ConverseCertificate {
    pub kind: ConverseKind,
    pub horizon: usize,
    pub envelope: Option<ExponentialEnvelope>,
    pub lipschitz_l1: f64,
    pub lipschitz_l2: Option<f64>,
    pub constants: ConverseConstants,
    /// `a5` as printed in the source formula, kept for comparison.
    pub a5_formula: Option<f64>,
    /// Radius of the state ball on which the constants were derived.
    pub state_radius: f64,
    /// Half-width of the frozen-parameter box on which `a5` is valid.
    pub parameter_box: Option<f64>,
    #[serde(skip)]
    step: StepFn,
    #[serde(skip)]
    param_dim: usize,
}

impl fmt::Debug for ConverseCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConverseCertificate")
            .field("kind", &self.kind)
            .field("horizon", &self.horizon)
            .field("envelope", &self.envelope)
            .field("lipschitz_l1", &self.lipschitz_l1)
            .field("lipschitz_l2", &self.lipschitz_l2)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl ConverseCertificate {
    /// `sum_{t=k}^{k+H-1} ||psi(t; k, state, x)||^2`.
    pub fn evaluate(&self, k: i64, state: &Vector, frozen: Option<&Vector>) -> f64 {
        let zero;
        let x = match frozen {
            Some(x) => x,
            None => {
                zero = Vector::zeros(self.param_dim);
                &zero
            }
        };
        let mut psi = state.clone();
        let mut sum = psi.norm_squared();
        for j in 1..self.horizon {
            psi = (self.step)(k + j as i64 - 1, &psi, x);
            sum += psi.norm_squared();
        }
        sum
    }

    /// The summed dynamics applied once.
    pub fn step(&self, k: i64, state: &Vector, frozen: Option<&Vector>) -> Vector {
        match frozen {
            Some(x) => (self.step)(k, state, x),
            None => (self.step)(k, state, &Vector::zeros(self.param_dim)),
        }
    }

    /// `psi(k + horizon; k, state, x)`.
    pub fn endpoint(&self, k: i64, state: &Vector, frozen: Option<&Vector>) -> Vector {
        let mut psi = state.clone();
        for j in 0..self.horizon {
            psi = self.step(k + j as i64, &psi, frozen);
        }
        psi
    }

    pub fn uses_parameter(&self) -> bool {
        matches!(self.kind, ConverseKind::FiniteTime | ConverseKind::Exponential)
    }
}

/// Sampled `max ||f(t,x) - f(t,y)|| / ||x - y||` over pairs sharing `t`,
/// times [`SAFETY`].
pub fn estimate_lipschitz<F>(f: F, samples: &SampleGrid) -> Result<f64>
where
    F: Fn(i64, &Vector) -> Vector + Sync,
{
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "Lipschitz estimation needs at least two samples".into(),
        ));
    }
    let images = par::map(&samples.points, |p| f(p.t, &p.x));
    let pts = &samples.points;
    let rows = par::map_range(pts.len(), |i| {
        let mut best: Option<f64> = None;
        for j in i + 1..pts.len() {
            if pts[i].t != pts[j].t {
                continue;
            }
            let d = (&pts[i].x - &pts[j].x).norm();
            if d == 0.0 {
                continue;
            }
            let r = (&images[i] - &images[j]).norm() / d;
            best = Some(best.map_or(r, |b: f64| b.max(r)));
        }
        best
    });
    let best = rows
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    match best {
        Some(l) if l.is_finite() => Ok(SAFETY * l),
        Some(_) => Err(Error::Numerical("non-finite Lipschitz ratio".into())),
        None => Err(Error::InvalidArgument("no distinct sample pairs".into())),
    }
}

/// Sampling controls shared by the converse builders.
#[derive(Debug, Clone, Copy)]
pub struct ConverseOptions {
    /// Radius of the fast-deviation ball `||y'||`.
    pub radius: f64,
    /// Half-width of the box for the frozen slow state `x`.
    pub slow_radius: f64,
    /// Number of `(k, x)` groups.
    pub groups: usize,
    /// `y'` samples per group.
    pub per_group: usize,
    /// Horizon used to check finite-time arrival or fit envelopes.
    pub fit_horizon: usize,
    pub seed: u64,
    /// Overrides for the sampled Lipschitz constants.
    pub l1: Option<f64>,
    pub l2: Option<f64>,
}

impl Default for ConverseOptions {
    fn default() -> Self {
        Self {
            radius: 1.0,
            slow_radius: 1.0,
            groups: 24,
            per_group: 12,
            fit_horizon: 60,
            seed: 0,
            l1: None,
            l2: None,
        }
    }
}

/// Ceiling that ignores rounding noise just above an integer.
fn ceil_tol(v: f64) -> f64 {
    (v - 1e-9 * v.abs().max(1.0)).ceil()
}

fn n_steps_bound(k: f64, lambda: f64) -> usize {
    let n = ceil_tol((2.0 * k * k).ln() / (2.0 * lambda));
    if n.is_finite() && n >= 1.0 {
        n as usize
    } else {
        1
    }
}

fn state_constants(env: &ExponentialEnvelope, n: usize, l: f64) -> ConverseConstants {
    let (k, lam) = (env.gain, env.rate);
    let e2 = (-2.0 * lam).exp();
    let a2 = k * k * (1.0 - e2.powi(n as i32)) / (1.0 - e2);
    let a3 = 1.0 - k * k * e2.powi(n as i32);
    let a4 = (0..n).map(|t| k * (-lam * t as f64).exp() * l.powi(t as i32)).sum();
    ConverseConstants {
        a1: 1.0,
        a2: a2.max(1.0),
        a3,
        a4,
        a5: None,
    }
}

fn build_state_converse(
    sys: &DynSystem,
    env: &ExponentialEnvelope,
    kind: ConverseKind,
    times: &[i64],
) -> Result<ConverseCertificate> {
    if !(env.gain >= 1.0 && env.rate > 0.0 && env.rate.is_finite()) {
        return Err(Error::Construction(format!(
            "invalid envelope gain {} / rate {}",
            env.gain, env.rate
        )));
    }
    let sys = sys.centered().unwrap_or_else(|_| sys.clone());
    let n = n_steps_bound(env.gain, env.rate);
    let outer = env.gain * env.validity_radius;
    let grid = SampleGrid::shells(sys.dim(), outer, 6, 32, times, &[]);
    let l = estimate_lipschitz(|t, x| sys.eval(t, x), &grid)?;
    let constants = state_constants(env, n, l);
    let s = sys.clone();
    Ok(ConverseCertificate {
        kind,
        horizon: n,
        envelope: Some(*env),
        lipschitz_l1: l,
        lipschitz_l2: None,
        constants,
        a5_formula: None,
        state_radius: env.validity_radius,
        parameter_box: None,
        step: Arc::new(move |t, x, _| s.eval(t, x)),
        param_dim: 0,
    })
}

/// `V(x) = sum_{t<N} ||phi(t, x)||^2` with `N = ceil(ln(2k^2) / 2 lambda)`.
pub fn build_autonomous_converse(sys: &DynSystem, env: &ExponentialEnvelope) -> Result<ConverseCertificate> {
    build_state_converse(sys, env, ConverseKind::Autonomous, &[0])
}

/// `V(t, x) = sum_{k=t}^{t+N-1} ||phi(k, t; x)||^2`.
pub fn build_nonautonomous_converse(sys: &DynSystem, env: &ExponentialEnvelope) -> Result<ConverseCertificate> {
    let times: Vec<i64> = (0..8).collect();
    build_state_converse(sys, env, ConverseKind::Nonautonomous, &times)
}

/// Sample of `(k, x, [y'])` groups for the fast dynamics.
#[derive(Debug, Clone)]
pub struct FastSamples {
    pub groups: Vec<(i64, Vector, Vec<Vector>)>,
}

impl FastSamples {
    /// Random groups; every group contains `y' = 0` and the signed axes.
    pub fn random(sys: &SlowFastSystem, opts: &ConverseOptions) -> Self {
        let mut rng = SeededRng::new(opts.seed ^ 0xfa57);
        let (n, m) = (sys.slow_dim(), sys.fast_dim());
        let groups = (0..opts.groups.max(1))
            .map(|g| {
                let k = rng.int_in(0, 63);
                let x = if g == 0 {
                    Vector::zeros(n)
                } else {
                    rng.in_box(n, opts.slow_radius)
                };
                let mut ys = vec![Vector::zeros(m)];
                for i in 0..m {
                    let mut e = Vector::zeros(m);
                    e[i] = opts.radius;
                    ys.push(-&e);
                    ys.push(e);
                }
                for _ in 0..opts.per_group {
                    ys.push(rng.in_ball(m, opts.radius));
                }
                (k, x, ys)
            })
            .collect();
        Self { groups }
    }
}

/// Sampled `L1` with `||phi'(k,y1,x) - phi'(k,y2,x)|| <= L1 ||y1 - y2||`.
pub fn estimate_fast_l1(sys: &SlowFastSystem, samples: &FastSamples) -> Result<f64> {
    let per = par::map(&samples.groups, |(k, x, ys)| {
        let grid = SampleGrid::from_points(ys.iter().map(|y| SamplePoint { t: *k, x: y.clone() }).collect());
        estimate_lipschitz(|t, y| sys.shifted_fast(t, y, x), &grid)
    });
    let mut l: f64 = 0.0;
    for r in per {
        l = l.max(r?);
    }
    Ok(l)
}

/// Sampled `L2` with `||d phi'(k,y',x) / dx|| <= L2 ||y'||`.
pub fn estimate_fast_l2(sys: &SlowFastSystem, samples: &FastSamples) -> f64 {
    let per = par::map(&samples.groups, |(k, x, ys)| {
        let mut best: f64 = 0.0;
        for y in ys {
            let ny = y.norm();
            if ny == 0.0 {
                continue;
            }
            let h = 1e-6 * x.norm().max(1.0);
            let jac = central_jacobian(|xx| sys.shifted_fast(*k, y, xx), x, h);
            best = best.max(operator_norm(&jac) / ny);
        }
        best
    });
    SAFETY * per.into_iter().fold(0.0, f64::max)
}

fn fast_constants(horizon: usize, l1: f64, l2: f64, a3: f64) -> (ConverseConstants, f64) {
    let a2: f64 = (0..horizon).map(|t| l1.powi(2 * t as i32)).sum();
    let printed: f64 = (1..horizon)
        .map(|t| 2.0 * l2 * l1.powi(t as i32) * (1..=t).map(|k| l1.powi(k as i32)).sum::<f64>())
        .fold(0.0, |acc, v| acc + v);
    let corrected: f64 = (1..horizon)
        .map(|s| 2.0 * s as f64 * l2 * l1.powi(2 * s as i32 - 1))
        .fold(0.0, |acc, v| acc + v);
    (
        ConverseConstants {
            a1: 1.0,
            a2,
            a3,
            a4: a2,
            a5: Some(printed.max(corrected)),
        },
        printed,
    )
}

fn fast_certificate(
    sys: &SlowFastSystem,
    kind: ConverseKind,
    horizon: usize,
    envelope: Option<ExponentialEnvelope>,
    a3: f64,
    samples: &FastSamples,
    opts: &ConverseOptions,
) -> Result<ConverseCertificate> {
    let l1 = match opts.l1 {
        Some(l) => l,
        None => estimate_fast_l1(sys, samples)?,
    };
    let l2 = opts.l2.unwrap_or_else(|| estimate_fast_l2(sys, samples));
    let (constants, printed) = fast_constants(horizon, l1, l2, a3);
    let s = sys.clone();
    Ok(ConverseCertificate {
        kind,
        horizon,
        envelope,
        lipschitz_l1: l1,
        lipschitz_l2: Some(l2),
        constants,
        a5_formula: Some(printed),
        state_radius: opts.radius,
        parameter_box: Some(opts.slow_radius),
        step: Arc::new(move |k, y, x| s.shifted_fast(k, y, x)),
        param_dim: sys.slow_dim(),
    })
}

/// Finite-time construction: the shifted fast dynamics must reach zero in
/// `horizon` steps from every sample.
pub fn build_finite_time_converse(sys: &SlowFastSystem, horizon: usize, opts: &ConverseOptions) -> Result<ConverseCertificate> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let samples = FastSamples::random(sys, opts);
    for (k, x, ys) in &samples.groups {
        for y in ys {
            let mut psi = y.clone();
            for j in 0..horizon {
                psi = sys.shifted_fast(k + j as i64, &psi, x);
            }
            let residual = psi.norm();
            if !(residual <= 1e-9 * y.norm().max(1e-300)) && residual != 0.0 {
                return Err(Error::NotFiniteTime {
                    horizon,
                    k: *k,
                    residual,
                });
            }
        }
    }
    fast_certificate(sys, ConverseKind::FiniteTime, horizon, None, 1.0, &samples, opts)
}

/// `T* = ceil(-ln(2C) / ln rho)`, at least 1.
pub fn exponential_horizon(c: f64, rho: f64) -> Result<usize> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0,1), got {rho}")));
    }
    let t = ceil_tol(-(2.0 * c).ln() / rho.ln());
    Ok(if t.is_finite() && t >= 1.0 { t as usize } else { 1 })
}

/// Exponential construction with horizon `T*` and `a3 = 1/2`.
pub fn build_exponential_converse(
    sys: &SlowFastSystem,
    env: &ExponentialEnvelope,
    opts: &ConverseOptions,
) -> Result<ConverseCertificate> {
    let horizon = exponential_horizon(env.gain, env.rho())?;
    let samples = FastSamples::random(sys, opts);
    fast_certificate(sys, ConverseKind::Exponential, horizon, Some(*env), 0.5, &samples, opts)
}

/// Fits `(C, rho)` to the shifted fast dynamics, uniformly over sampled
/// `(k, x)`.
pub fn fit_fast_envelope(sys: &SlowFastSystem, opts: &ConverseOptions) -> Result<ExponentialEnvelope> {
    let samples = FastSamples::random(sys, opts);
    let mut trajectories = Vec::new();
    for (k, x, ys) in &samples.groups {
        for y in ys.iter().filter(|y| y.norm() > 0.0) {
            let mut states = vec![y.clone()];
            for j in 0..opts.fit_horizon {
                let next = sys.shifted_fast(k + j as i64, &states[j], x);
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence { index: j + 1 });
                }
                states.push(next);
            }
            trajectories.push(Trajectory { t0: *k, states });
        }
    }
    fit_exponential_envelope(&trajectories, EnvelopeFitOptions::default())
}

/// One verification sample: a state pair and a frozen-parameter pair.
#[derive(Debug, Clone)]
pub struct ConverseSample {
    pub k: i64,
    pub state: Vector,
    pub other_state: Vector,
    pub frozen: Option<Vector>,
    pub other_frozen: Option<Vector>,
}

/// Random verification samples inside the certificate's domain.
pub fn converse_samples(cert: &ConverseCertificate, state_dim: usize, count: usize, seed: u64) -> Vec<ConverseSample> {
    let mut rng = SeededRng::new(seed);
    let r = cert.state_radius;
    let b = cert.parameter_box.unwrap_or(0.0);
    let pd = cert.param_dim;
    (0..count)
        .map(|i| {
            let state = if i == 0 {
                Vector::zeros(state_dim)
            } else {
                rng.in_ball(state_dim, r)
            };
            let other_state = rng.in_ball(state_dim, r);
            let (frozen, other_frozen) = if cert.uses_parameter() {
                (Some(rng.in_box(pd, b)), Some(rng.in_box(pd, b)))
            } else {
                (None, None)
            };
            ConverseSample {
                k: rng.int_in(0, 63),
                state,
                other_state,
                frozen,
                other_frozen,
            }
        })
        .collect()
}

type Row = (f64, f64, f64, Option<f64>);

/// Checks bounds, decrement, state-Lipschitz and (when `a5` is present)
/// parameter-Lipschitz inequalities at every sample.
pub fn verify_converse(cert: &ConverseCertificate, samples: &[ConverseSample]) -> Result<Vec<ConditionReport>> {
    if samples.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let c = cert.constants;
    let rows = par::map(samples, |s| {
        let x = s.frozen.as_ref();
        let w = cert.evaluate(s.k, &s.state, x);
        let n2 = s.state.norm_squared();
        let bounds = (c.a1 * n2 - w).max(w - c.a2 * n2) - tolerance(w);
        let next = cert.step(s.k, &s.state, x);
        let w_next = cert.evaluate(s.k + 1, &next, x);
        let decrement = w_next - w + c.a3 * n2 - tolerance(w);
        let w2 = cert.evaluate(s.k, &s.other_state, x);
        let lip = (w - w2).abs()
            - c.a4 * (&s.state - &s.other_state).norm() * (s.state.norm() + s.other_state.norm())
            - tolerance(w.max(w2));
        let param = match (c.a5, x, s.other_frozen.as_ref()) {
            (Some(a5), Some(x1), Some(x2)) => {
                let wx2 = cert.evaluate(s.k, &s.state, Some(x2));
                Some((w - wx2).abs() - a5 * n2 * (x1 - x2).norm() - tolerance(w.max(wx2)))
            }
            _ => None,
        };
        (bounds, decrement, lip, param)
    });
    let pick = |f: &dyn Fn(&Row) -> Option<f64>| -> Vec<(f64, i64, &Vector)> {
        rows.iter()
            .zip(samples)
            .filter_map(|(r, s)| f(r).map(|m| (m, s.k, &s.state)))
            .collect()
    };
    let mut out = vec![
        ConditionReport::from_margins(Condition::Bounds, Requirement::NonPositive, &pick(&|r| Some(r.0))),
        ConditionReport::from_margins(Condition::Decrement, Requirement::NonPositive, &pick(&|r| Some(r.1))),
        ConditionReport::from_margins(Condition::StateLipschitz, Requirement::NonPositive, &pick(&|r| Some(r.2))),
    ];
    if c.a5.is_some() {
        let m = pick(&|r| r.3);
        if !m.is_empty() {
            out.push(ConditionReport::from_margins(
                Condition::ParameterLipschitz,
                Requirement::NonPositive,
                &m,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;
    use approx::assert_relative_eq;

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn half() -> DynSystem {
        DynSystem::new(1, true, |_, x| x * 0.5).unwrap()
    }

    fn fast_linear(f: Matrix) -> SlowFastSystem {
        let m = f.nrows();
        SlowFastSystem::new(1, m, |_, x, _| -x, move |_, y, _| &f * y, move |_| Vector::zeros(m), 0.1).unwrap()
    }

    #[test]
    fn autonomous_examples() {
        let env = ExponentialEnvelope::new(1.0, 2f64.ln(), 1.0).unwrap();
        let c = build_autonomous_converse(&half(), &env).unwrap();
        assert_eq!(c.horizon, 1);
        assert_relative_eq!(c.evaluate(0, &v1(0.7), None), 0.49);
        let x = v1(0.8);
        let dv = c.evaluate(0, &c.step(0, &x, None), None) - c.evaluate(0, &x, None);
        assert_relative_eq!(dv, -0.75 * 0.64, epsilon = 1e-15);
        assert!(c.constants.a3 >= 0.5);

        let dead = DynSystem::new(2, true, |_, x| x * 0.0).unwrap();
        let c = build_autonomous_converse(&dead, &ExponentialEnvelope::new(1.0, 5.0, 1.0).unwrap()).unwrap();
        assert_eq!(c.horizon, 1);

        assert_eq!(n_steps_bound(2.0, 2f64.ln()), 2);
    }

    #[test]
    fn nonautonomous_examples() {
        let sys = DynSystem::new(1, false, |_, x| x * 0.5).unwrap();
        let env = ExponentialEnvelope::new(2.0, 2f64.ln(), 1.0).unwrap();
        let c = build_nonautonomous_converse(&sys, &env).unwrap();
        assert_eq!(c.horizon, 2);
        for t in 0..5 {
            assert_relative_eq!(c.evaluate(t, &v1(1.0), None), 1.25);
            assert_eq!(c.evaluate(t, &v1(0.0), None), 0.0);
        }

        let sw = DynSystem::new(1, false, |t, x| x * if t % 2 == 0 { 0.0 } else { 0.5 }).unwrap();
        let c = build_nonautonomous_converse(&sw, &env).unwrap();
        assert_relative_eq!(c.evaluate(0, &v1(1.0), None), 1.0);
        assert_relative_eq!(c.evaluate(1, &v1(1.0), None), 1.25);
    }

    #[test]
    fn finite_time_examples() {
        let dead = fast_linear(Matrix::zeros(1, 1));
        let c = build_finite_time_converse(&dead, 1, &ConverseOptions::default()).unwrap();
        assert_relative_eq!(c.evaluate(3, &v1(0.6), Some(&v1(0.1))), 0.36);
        assert_eq!(c.constants.a2, 1.0);

        let nil = fast_linear(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        let opts = ConverseOptions {
            l1: Some(1.0),
            ..Default::default()
        };
        let c = build_finite_time_converse(&nil, 2, &opts).unwrap();
        assert_eq!(c.constants.a2, 2.0);
        let y = Vector::from_vec(vec![0.3, -0.4]);
        assert_relative_eq!(c.evaluate(0, &y, Some(&v1(0.0))), 0.25 + 0.16);
        let z = Vector::zeros(2);
        assert_eq!(c.evaluate(0, &z, Some(&v1(0.0))), 0.0);

        assert!(matches!(
            build_finite_time_converse(&nil, 1, &opts),
            Err(Error::NotFiniteTime { .. })
        ));
    }

    #[test]
    fn exponential_examples() {
        assert_eq!(exponential_horizon(2.0, 0.5).unwrap(), 2);
        assert_eq!(exponential_horizon(0.5, 0.3).unwrap(), 1);
        assert!(exponential_horizon(1.0, 1.0).is_err());

        let sys = fast_linear(Matrix::from_element(1, 1, 0.5));
        let env = fit_fast_envelope(&sys, &ConverseOptions::default()).unwrap();
        assert_relative_eq!(env.gain, 1.0, epsilon = 1e-9);
        assert_relative_eq!(env.rho(), 0.5, epsilon = 1e-9);
        let c = build_exponential_converse(&sys, &env, &ConverseOptions::default()).unwrap();
        assert_eq!(c.horizon, 1);
        let y = v1(0.9);
        let x = v1(0.2);
        let dw = c.evaluate(1, &c.step(0, &y, Some(&x)), Some(&x)) - c.evaluate(0, &y, Some(&x));
        assert_relative_eq!(dw, -0.75 * 0.81, epsilon = 1e-15);
    }

    #[test]
    fn verify_deadbeat_and_perturbed() {
        let dead = fast_linear(Matrix::zeros(1, 1));
        let c = build_finite_time_converse(&dead, 1, &ConverseOptions::default()).unwrap();
        let samples = converse_samples(&c, 1, 200, 3);
        let reps = verify_converse(&c, &samples).unwrap();
        assert_eq!(reps.len(), 4);
        assert!(reps.iter().all(|r| r.passed), "{reps:?}");

        let mut bad = c.clone();
        bad.constants.a3 *= 2.0;
        let reps = verify_converse(&bad, &samples).unwrap();
        assert!(!reps[1].passed);

        let zero = vec![ConverseSample {
            k: 0,
            state: v1(0.0),
            other_state: v1(0.0),
            frozen: Some(v1(0.0)),
            other_frozen: Some(v1(0.0)),
        }];
        let reps = verify_converse(&c, &zero).unwrap();
        assert!(reps.iter().all(|r| r.passed));
    }

    #[test]
    fn lipschitz_examples() {
        let grid = SampleGrid::line(-1.0, 1.0, 11);
        assert_relative_eq!(estimate_lipschitz(|_, x| x * 0.5, &grid).unwrap(), 0.55, epsilon = 1e-12);
        assert_relative_eq!(estimate_lipschitz(|_, x| x.clone(), &grid).unwrap(), 1.1, epsilon = 1e-12);
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let svd = a.clone().svd(true, true);
        let v = svd.v_t.unwrap().row(0).transpose();
        let g = SampleGrid::shells(2, 1.0, 3, 16, &[0], &[v]);
        let l = estimate_lipschitz(|_, x| &a * x, &g).unwrap();
        assert_relative_eq!(l, 1.1 * operator_norm(&a), epsilon = 1e-9);
    }

    #[test]
    fn telescoping_identity() {
        let f = Matrix::from_row_slice(2, 2, &[0.3, 0.2, -0.1, 0.4]);
        let sys = fast_linear(f);
        let env = fit_fast_envelope(&sys, &ConverseOptions::default()).unwrap();
        let c = build_exponential_converse(&sys, &env, &ConverseOptions::default()).unwrap();
        let x = v1(0.3);
        let y = Vector::from_vec(vec![0.5, -0.2]);
        let lhs = c.evaluate(1, &c.step(0, &y, Some(&x)), Some(&x)) - c.evaluate(0, &y, Some(&x));
        let rhs = c.endpoint(0, &y, Some(&x)).norm_squared() - y.norm_squared();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
