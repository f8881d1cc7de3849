//! Discrete-time systems, trajectories, transition matrices and empirical
//! exponential decay envelopes.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::linalg::{central_jacobian, is_finite, operator_norm};
use crate::{par, Error, Matrix, Result, Vector};

/// State-map evaluator `(t, x) -> x(t+1)`.
pub type MapFn = Arc<dyn Fn(i64, &Vector) -> Vector + Send + Sync>;
/// Time-varying matrix generator `t -> A(t)`.
pub type MatrixFn = Arc<dyn Fn(i64) -> Matrix + Send + Sync>;
/// Two-argument vector field, e.g. `(k, x, y) -> phi`.
pub type PairMapFn = Arc<dyn Fn(i64, &Vector, &Vector) -> Vector + Send + Sync>;
/// State-only vector field `x -> y*(x)`.
pub type StateFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// Tolerance for fixed-point checks on declared equilibria.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;
/// States with a norm beyond this abort a simulation.
pub const DIVERGENCE_BOUND: f64 = 1e12;
const EQUILIBRIUM_TIME_SAMPLES: i64 = 16;

/// A discrete map `x(t+1) = f(t, x(t))`.
#[derive(Clone)]
pub struct DynSystem {
    dim: usize,
    map: MapFn,
    autonomous: bool,
    equilibrium: Option<Vector>,
}

impl fmt::Debug for DynSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynSystem")
            .field("dim", &self.dim)
            .field("autonomous", &self.autonomous)
            .field("equilibrium", &self.equilibrium)
            .finish_non_exhaustive()
    }
}

impl DynSystem {
    /// A system whose equilibrium is the origin. Fails if `f(t, 0) != 0`.
    pub fn new<F>(dim: usize, autonomous: bool, map: F) -> Result<Self>
    where
        F: Fn(i64, &Vector) -> Vector + Send + Sync + 'static,
    {
        Self::with_equilibrium(dim, autonomous, map, Vector::zeros(dim))
    }

    /// A system with a declared fixed point, checked on sampled times.
    pub fn with_equilibrium<F>(dim: usize, autonomous: bool, map: F, equilibrium: Vector) -> Result<Self>
    where
        F: Fn(i64, &Vector) -> Vector + Send + Sync + 'static,
    {
        let mut sys = Self::without_equilibrium(dim, autonomous, map)?;
        sys.declare_equilibrium(equilibrium)?;
        Ok(sys)
    }

    /// A system with no declared equilibrium (simulation, fixed-point search).
    pub fn without_equilibrium<F>(dim: usize, autonomous: bool, map: F) -> Result<Self>
    where
        F: Fn(i64, &Vector) -> Vector + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        let map: MapFn = Arc::new(map);
        let probe = map(0, &Vector::zeros(dim));
        if probe.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: probe.len(),
            });
        }
        Ok(Self {
            dim,
            map,
            autonomous,
            equilibrium: None,
        })
    }

    pub fn declare_equilibrium(&mut self, equilibrium: Vector) -> Result<()> {
        if equilibrium.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: equilibrium.len(),
            });
        }
        let times = if self.autonomous { 1 } else { EQUILIBRIUM_TIME_SAMPLES };
        for t in 0..times {
            let residual = ((self.map)(t, &equilibrium) - &equilibrium).norm();
            if !(residual <= EQUILIBRIUM_TOL) {
                return Err(Error::NotAnEquilibrium { t, residual });
            }
        }
        self.equilibrium = Some(equilibrium);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn equilibrium(&self) -> Option<&Vector> {
        self.equilibrium.as_ref()
    }

    pub fn map_fn(&self) -> &MapFn {
        &self.map
    }

    #[inline]
    pub fn eval(&self, t: i64, x: &Vector) -> Vector {
        (self.map)(t, x)
    }

    /// The same dynamics in error coordinates `e = x - x*`, so that the
    /// declared equilibrium sits at the origin.
    pub fn centered(&self) -> Result<DynSystem> {
        let eq = self
            .equilibrium
            .clone()
            .ok_or_else(|| Error::InvalidArgument("system has no declared equilibrium".into()))?;
        if eq.iter().all(|v| *v == 0.0) {
            return Ok(self.clone());
        }
        let map = self.map.clone();
        let shifted = move |t: i64, e: &Vector| map(t, &(e + &eq)) - &eq;
        Ok(DynSystem {
            dim: self.dim,
            map: Arc::new(shifted),
            autonomous: self.autonomous,
            equilibrium: Some(Vector::zeros(self.dim)),
        })
    }
}

/// Linear time-varying system `x(t+1) = A(t) x(t)`.
#[derive(Clone)]
pub struct LinearTV {
    dim: usize,
    generator: MatrixFn,
    period: Option<usize>,
}

impl fmt::Debug for LinearTV {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearTV")
            .field("dim", &self.dim)
            .field("period", &self.period)
            .finish_non_exhaustive()
    }
}

impl LinearTV {
    pub fn new<F>(dim: usize, generator: F, period: Option<usize>) -> Result<Self>
    where
        F: Fn(i64) -> Matrix + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        if period == Some(0) {
            return Err(Error::InvalidArgument("period must be positive".into()));
        }
        let generator: MatrixFn = Arc::new(generator);
        for t in 0..EQUILIBRIUM_TIME_SAMPLES {
            let a = generator(t);
            if a.shape() != (dim, dim) {
                return Err(Error::Dimension {
                    expected: dim,
                    got: if a.nrows() != dim { a.nrows() } else { a.ncols() },
                });
            }
            if let Some(p) = period {
                if generator(t + p as i64) != a {
                    return Err(Error::InvalidArgument(format!("generator is not {p}-periodic at t={t}")));
                }
            }
        }
        Ok(Self { dim, generator, period })
    }

    /// Constant generator `A(t) = A`.
    pub fn constant(a: Matrix) -> Result<Self> {
        let n = a.nrows();
        Self::new(n, move |_| a.clone(), Some(1))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> Option<usize> {
        self.period
    }

    #[inline]
    pub fn at(&self, t: i64) -> Matrix {
        (self.generator)(t)
    }

    /// View as a general [`DynSystem`].
    pub fn as_system(&self) -> DynSystem {
        let generator = self.generator.clone();
        DynSystem {
            dim: self.dim,
            map: Arc::new(move |t, x| generator(t) * x),
            autonomous: self.period == Some(1),
            equilibrium: Some(Vector::zeros(self.dim)),
        }
    }
}

/// A solution segment starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: i64,
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial(&self) -> &Vector {
        &self.states[0]
    }

    pub fn last(&self) -> &Vector {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.norm()).collect()
    }

    /// Re-applies the map and confirms every step bit-for-bit.
    pub fn reconstructs(&self, sys: &DynSystem) -> bool {
        self.states
            .windows(2)
            .enumerate()
            .all(|(j, w)| sys.eval(self.t0 + j as i64, &w[0]) == w[1])
    }

    /// CSV with header `t,x0,...,x{n-1}` and one row per step.
    pub fn to_csv(&self) -> String {
        let dim = self.states.first().map_or(0, |s| s.len());
        let mut out = String::from("t");
        for i in 0..dim {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (j, s) in self.states.iter().enumerate() {
            out.push_str(&(self.t0 + j as i64).to_string());
            for v in s.iter() {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Bound `||x(t)|| <= k ||x(t0)|| exp(-lambda (t - t0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialEnvelope {
    pub gain: f64,
    pub rate: f64,
    pub validity_radius: f64,
}

impl ExponentialEnvelope {
    pub fn new(gain: f64, rate: f64, validity_radius: f64) -> Result<Self> {
        if !(gain >= 1.0) || !(rate > 0.0) || !rate.is_finite() || !(validity_radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "envelope needs gain >= 1, rate > 0, radius > 0 (got {gain}, {rate}, {validity_radius})"
            )));
        }
        Ok(Self {
            gain,
            rate,
            validity_radius,
        })
    }

    /// Builds from the `(C, rho)` parametrisation.
    pub fn from_rho(c: f64, rho: f64, validity_radius: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0,1), got {rho}")));
        }
        Self::new(c, -rho.ln(), validity_radius)
    }

    pub fn rho(&self) -> f64 {
        (-self.rate).exp()
    }

    pub fn bound(&self, initial_norm: f64, elapsed: u64) -> f64 {
        self.gain * initial_norm * (-self.rate * elapsed as f64).exp()
    }
}

/// Coupled slow/fast pair
/// `x(k+1) = x + eps * phi(k, x, y)`, `y(k+1) = varphi(k, y, x)`.
#[derive(Clone)]
pub struct SlowFastSystem {
    slow_dim: usize,
    fast_dim: usize,
    phi: PairMapFn,
    varphi: PairMapFn,
    ystar: StateFn,
    epsilon: f64,
}

impl fmt::Debug for SlowFastSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlowFastSystem")
            .field("slow_dim", &self.slow_dim)
            .field("fast_dim", &self.fast_dim)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

impl SlowFastSystem {
    /// `phi(k, x, y)` is the slow increment, `varphi(k, y, x)` the fast map
    /// and `ystar(x)` its fixed point for frozen `x`.
    pub fn new<P, F, S>(slow_dim: usize, fast_dim: usize, phi: P, varphi: F, ystar: S, epsilon: f64) -> Result<Self>
    where
        P: Fn(i64, &Vector, &Vector) -> Vector + Send + Sync + 'static,
        F: Fn(i64, &Vector, &Vector) -> Vector + Send + Sync + 'static,
        S: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        if slow_dim == 0 || fast_dim == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon must lie in (0,1], got {epsilon}")));
        }
        let sys = Self {
            slow_dim,
            fast_dim,
            phi: Arc::new(phi),
            varphi: Arc::new(varphi),
            ystar: Arc::new(ystar),
            epsilon,
        };
        let mut probes = vec![Vector::zeros(slow_dim)];
        for i in 0..slow_dim {
            for s in [-0.5, 0.5] {
                let mut e = Vector::zeros(slow_dim);
                e[i] = s;
                probes.push(e);
            }
        }
        for x in &probes {
            let ys = sys.ystar(x);
            if ys.len() != fast_dim {
                return Err(Error::Dimension {
                    expected: fast_dim,
                    got: ys.len(),
                });
            }
            let step = sys.phi(0, x, &ys);
            if step.len() != slow_dim {
                return Err(Error::Dimension {
                    expected: slow_dim,
                    got: step.len(),
                });
            }
            for k in 0..4 {
                let residual = (sys.varphi(k, &ys, x) - &ys).norm();
                if !(residual <= EQUILIBRIUM_TOL) {
                    return Err(Error::NotAnEquilibrium { t: k, residual });
                }
            }
        }
        Ok(sys)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon must lie in (0,1], got {epsilon}")));
        }
        let mut s = self.clone();
        s.epsilon = epsilon;
        Ok(s)
    }

    pub fn slow_dim(&self) -> usize {
        self.slow_dim
    }

    pub fn fast_dim(&self) -> usize {
        self.fast_dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn phi(&self, k: i64, x: &Vector, y: &Vector) -> Vector {
        (self.phi)(k, x, y)
    }

    #[inline]
    pub fn varphi(&self, k: i64, y: &Vector, x: &Vector) -> Vector {
        (self.varphi)(k, y, x)
    }

    #[inline]
    pub fn ystar(&self, x: &Vector) -> Vector {
        (self.ystar)(x)
    }

    /// Fast map in deviation coordinates: `varphi(k, y' + y*(x), x) - y*(x)`.
    pub fn shifted_fast(&self, k: i64, yp: &Vector, x: &Vector) -> Vector {
        let ys = self.ystar(x);
        self.varphi(k, &(yp + &ys), x) - ys
    }

    /// Reduced slow field `phi(k, x, y*(x))`.
    pub fn reduced_slow(&self, k: i64, x: &Vector) -> Vector {
        self.phi(k, x, &self.ystar(x))
    }
}

/// Iterates `sys` for `horizon` steps from `x0` at time `t0`.
pub fn simulate(sys: &DynSystem, t0: i64, x0: &Vector, horizon: usize) -> Result<Trajectory> {
    if x0.len() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if !is_finite(x0) || x0.norm() > DIVERGENCE_BOUND {
        return Err(Error::Divergence { index: 0 });
    }
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    for j in 0..horizon {
        let next = sys.eval(t0 + j as i64, &states[j]);
        if next.len() != sys.dim() {
            return Err(Error::Dimension {
                expected: sys.dim(),
                got: next.len(),
            });
        }
        if !is_finite(&next) || next.norm() > DIVERGENCE_BOUND {
            return Err(Error::Divergence { index: j + 1 });
        }
        states.push(next);
    }
    Ok(Trajectory { t0, states })
}

/// Simulates many initial conditions, in parallel when enabled.
pub fn simulate_batch(sys: &DynSystem, t0: i64, initial: &[Vector], horizon: usize) -> Vec<Result<Trajectory>> {
    par::map(initial, |x0| simulate(sys, t0, x0, horizon))
}

/// `Phi(t, t0) = A(t-1) ... A(t0)`, identity when `t == t0`.
pub fn transition_matrix(sys: &LinearTV, t: i64, t0: i64) -> Result<Matrix> {
    if t < t0 {
        return Err(Error::InvalidArgument(format!("t={t} precedes t0={t0}")));
    }
    let mut phi = Matrix::identity(sys.dim(), sys.dim());
    for s in t0..t {
        phi = sys.at(s) * phi;
    }
    Ok(phi)
}

/// Damped Newton iteration on `f(t, x) - x` with a central-difference Jacobian.
pub fn find_equilibrium(sys: &DynSystem, guess: &Vector, tol: f64) -> Result<Vector> {
    const MAX_ITERS: usize = 200;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if guess.len() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            got: guess.len(),
        });
    }
    let residual = |x: &Vector| sys.eval(0, x) - x;
    let mut x = guess.clone();
    let mut r = residual(&x);
    for _ in 0..MAX_ITERS {
        if r.norm() <= tol * 1e-3 {
            break;
        }
        let h = 1e-7 * x.norm().max(1.0);
        let jac = central_jacobian(residual, &x, h);
        let step = match jac.clone().lu().solve(&(-&r)) {
            Some(s) if is_finite(&s) => s,
            // Singular Jacobian: fall back to a plain fixed-point step.
            _ => sys.eval(0, &x) - &x,
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &x + &step * alpha;
            let rc = residual(&cand);
            if is_finite(&rc) && rc.norm() < r.norm() {
                x = cand;
                r = rc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let times = if sys.is_autonomous() { 1 } else { EQUILIBRIUM_TIME_SAMPLES };
    for t in 0..times {
        let res = (sys.eval(t, &x) - &x).norm();
        if !(res <= tol) {
            return Err(Error::EquilibriumNotFound(format!(
                "residual {res:e} exceeds tolerance {tol:e} at t={t}"
            )));
        }
    }
    Ok(x)
}

/// Options for [`fit_exponential_envelope`].
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeFitOptions {
    /// Rate reported when no decay can be measured (deadbeat or zero data).
    pub rate_max: f64,
    /// Relative floor under which a norm counts as exactly zero.
    pub zero_floor: f64,
}

impl Default for EnvelopeFitOptions {
    fn default() -> Self {
        Self {
            rate_max: 20.0,
            zero_floor: 1e-12,
        }
    }
}

/// Fits a dominating `(k, lambda)` envelope to a set of trajectories.
///
/// Each trajectory's decay rate is estimated by least squares on
/// `log ||x(t)|| / ||x(0)||` for `t >= 1`; the slowest rate is kept and the
/// gain is raised to the largest pointwise violation so that the bound holds
/// on every sample.
pub fn fit_exponential_envelope(trajectories: &[Trajectory], opts: EnvelopeFitOptions) -> Result<ExponentialEnvelope> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories to fit".into()));
    }
    let mut ratio_series = Vec::with_capacity(trajectories.len());
    let mut radius: f64 = 0.0;
    for (i, tr) in trajectories.iter().enumerate() {
        let norms = tr.norms();
        let n0 = norms[0];
        radius = radius.max(n0);
        if n0 == 0.0 {
            continue;
        }
        let last = *norms.last().unwrap();
        if last >= n0 {
            return Err(Error::NotExponentiallyStable(format!(
                "trajectory {i} does not decay: final norm {last:e} >= initial {n0:e}"
            )));
        }
        if norms.len() < 10 && last > opts.zero_floor * n0 {
            return Err(Error::InvalidArgument(format!(
                "trajectory {i} is too short to fit (length {}, needs 10 or full decay)",
                norms.len()
            )));
        }
        ratio_series.push(norms.iter().map(|n| n / n0).collect::<Vec<_>>());
    }
    let mut rate = opts.rate_max;
    for series in &ratio_series {
        rate = rate.min(series_rate(&[series.as_slice()], opts));
    }
    finish_envelope(&ratio_series, rate, radius.max(f64::MIN_POSITIVE), opts)
}

/// Fits one rate to several normalised norm sequences at once.
pub(crate) fn fit_pooled_envelope(series: &[Vec<f64>], radius: f64, opts: EnvelopeFitOptions) -> Result<ExponentialEnvelope> {
    let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
    let rate = series_rate(&refs, opts).min(opts.rate_max);
    finish_envelope(series, rate, radius, opts)
}

fn series_rate(series: &[&[f64]], opts: EnvelopeFitOptions) -> f64 {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| {
            s.iter()
                .enumerate()
                .skip(1)
                .filter(|(_, r)| **r > opts.zero_floor)
                .map(|(t, r)| (t as f64, r.ln()))
        })
        .collect();
    let distinct_t = {
        let mut ts: Vec<u64> = pts.iter().map(|p| p.0 as u64).collect();
        ts.sort_unstable();
        ts.dedup();
        ts.len()
    };
    match distinct_t {
        0 => opts.rate_max,
        1 => {
            let (t, l) = pts
                .iter()
                .fold((0.0, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { *p } else { acc });
            -l / t
        }
        _ => {
            let n = pts.len() as f64;
            let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
            -sxy / sxx
        }
    }
}

fn finish_envelope(ratio_series: &[Vec<f64>], rate: f64, radius: f64, opts: EnvelopeFitOptions) -> Result<ExponentialEnvelope> {
    if !(rate > 0.0) {
        return Err(Error::NotExponentiallyStable(format!(
            "fitted decay rate {rate:e} is not positive"
        )));
    }
    let rate = rate.min(opts.rate_max);
    let mut gain: f64 = 1.0;
    for series in ratio_series {
        for (t, r) in series.iter().enumerate() {
            gain = gain.max(r * (rate * t as f64).exp());
        }
    }
    ExponentialEnvelope::new(gain, rate, radius)
}

/// Operator norms `||Phi(t0 + s, t0)||` for `s = 0..=horizon`.
pub(crate) fn transition_norms(sys: &LinearTV, t0: i64, horizon: usize) -> Vec<f64> {
    let mut phi = Matrix::identity(sys.dim(), sys.dim());
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(1.0);
    for s in 0..horizon {
        phi = sys.at(t0 + s as i64) * phi;
        out.push(operator_norm(&phi));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> DynSystem {
        DynSystem::without_equilibrium(1, true, move |_, x| Vector::from_element(1, f(x[0]))).unwrap()
    }

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn simulate_geometric() {
        let tr = simulate(&scalar(|x| 0.5 * x), 0, &v1(8.0), 3).unwrap();
        let xs: Vec<f64> = tr.states.iter().map(|s| s[0]).collect();
        assert_eq!(xs, vec![8.0, 4.0, 2.0, 1.0]);
    }

    #[test]
    fn simulate_identity_and_fixed_point() {
        let v = Vector::from_vec(vec![1.5, -2.0]);
        let id = DynSystem::without_equilibrium(2, true, |_, x| x.clone()).unwrap();
        let tr = simulate(&id, 0, &v, 5).unwrap();
        assert_eq!(tr.len(), 6);
        assert!(tr.states.iter().all(|s| *s == v));

        let tr = simulate(&scalar(|x| 0.5 * x + 1.0), 0, &v1(2.0), 4).unwrap();
        assert!(tr.states.iter().all(|s| s[0] == 2.0));
    }

    #[test]
    fn simulate_reports_divergence_index() {
        let err = simulate(&scalar(|x| x * 1e7), 0, &v1(1.0), 5).unwrap_err();
        assert!(matches!(err, Error::Divergence { index: 2 }));
        let err = simulate(&scalar(|_| f64::NAN), 0, &v1(1.0), 5).unwrap_err();
        assert!(matches!(err, Error::Divergence { index: 1 }));
    }

    #[test]
    fn trajectory_csv_layout() {
        let tr = simulate(&scalar(|x| 0.5 * x), 0, &v1(8.0), 3).unwrap();
        assert_eq!(tr.to_csv(), "t,x0\n0,8\n1,4\n2,2\n3,1\n");
        assert!(tr.reconstructs(&scalar(|x| 0.5 * x)));
    }

    #[test]
    fn declared_equilibrium_is_checked() {
        let f = |_: i64, x: &Vector| x * 0.5 + Vector::from_element(1, 1.0);
        assert!(DynSystem::new(1, true, f).is_err());
        let sys = DynSystem::with_equilibrium(1, true, f, v1(2.0)).unwrap();
        let c = sys.centered().unwrap();
        assert_relative_eq!(c.eval(0, &v1(1.0))[0], 0.5);
    }

    #[test]
    fn transition_matrix_examples() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.3]);
        let sys = LinearTV::constant(a.clone()).unwrap();
        let phi = transition_matrix(&sys, 5, 2).unwrap();
        assert_relative_eq!(phi, &a * &a * &a, epsilon = 1e-15);
        assert_eq!(transition_matrix(&sys, 4, 4).unwrap(), Matrix::identity(2, 2));

        let tv = LinearTV::new(1, |t| Matrix::from_element(1, 1, 1.0 / (t as f64 + 2.0)), None).unwrap();
        assert_relative_eq!(transition_matrix(&tv, 2, 0).unwrap()[(0, 0)], 1.0 / 6.0, epsilon = 1e-15);
        assert!(transition_matrix(&tv, 0, 2).is_err());
    }

    #[test]
    fn periodic_generator_is_validated() {
        let ok = LinearTV::new(1, |t| Matrix::from_element(1, 1, if t % 2 == 0 { 0.2 } else { 0.8 }), Some(2));
        assert!(ok.is_ok());
        let bad = LinearTV::new(1, |t| Matrix::from_element(1, 1, t as f64), Some(2));
        assert!(bad.is_err());
    }

    #[test]
    fn find_equilibrium_examples() {
        let x = find_equilibrium(&scalar(|x| 0.5 * x + 1.0), &v1(0.0), 1e-10).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-10);
        let x = find_equilibrium(&scalar(|x| 0.5 * x), &v1(3.0), 1e-10).unwrap();
        assert!(x[0].abs() < 1e-10);
        // roots of x = 0.5x + x^2 are {0, 0.5}; the guess is nearer 0
        let x = find_equilibrium(&scalar(|x| 0.5 * x + x * x), &v1(0.1), 1e-10).unwrap();
        assert!(x[0].abs() < 1e-10);
    }

    #[test]
    fn find_equilibrium_reports_failure() {
        // x + 1 has no fixed point
        let err = find_equilibrium(&scalar(|x| x + 1.0), &v1(0.0), 1e-8).unwrap_err();
        assert!(matches!(err, Error::EquilibriumNotFound(_)));
    }

    fn geometric(c: f64, r: f64, len: usize) -> Trajectory {
        Trajectory {
            t0: 0,
            states: (0..len).map(|t| v1(c * r.powi(t as i32))).collect(),
        }
    }

    #[test]
    fn envelope_of_pure_geometric() {
        let env = fit_exponential_envelope(&[geometric(3.0, 0.5, 20)], Default::default()).unwrap();
        assert_relative_eq!(env.gain, 1.0, epsilon = 1e-12);
        assert_relative_eq!(env.rate, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn envelope_of_zero_trajectory() {
        let z = Trajectory {
            t0: 0,
            states: vec![v1(0.0); 12],
        };
        let opts = EnvelopeFitOptions::default();
        let env = fit_exponential_envelope(&[z], opts).unwrap();
        assert_eq!(env.gain, 1.0);
        assert_eq!(env.rate, opts.rate_max);
    }

    #[test]
    fn envelope_dominates_slowest_curve() {
        // 0.5^t and a curve that jumps to 2 * 0.6^t after the first step,
        // both from unit initial norm.
        let a = geometric(1.0, 0.5, 30);
        let mut b = geometric(2.0, 0.6, 30);
        b.states[0] = v1(1.0);
        let env = fit_exponential_envelope(&[a, b], Default::default()).unwrap();
        assert_relative_eq!(env.gain, 2.0, epsilon = 1e-9);
        assert_relative_eq!(env.rate, (1.0f64 / 0.6).ln(), epsilon = 1e-12);
    }

    #[test]
    fn envelope_rejects_non_decaying() {
        let err = fit_exponential_envelope(&[geometric(1.0, 1.0, 12)], Default::default()).unwrap_err();
        assert!(matches!(err, Error::NotExponentiallyStable(_)));
    }
}
