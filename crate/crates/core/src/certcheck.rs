//! Sampled verification of Lyapunov hypotheses.
//!
//! Every check here evaluates a condition on a finite [`SampleGrid`]. A
//! passing [`ConditionReport`] is sampled evidence, never a proof.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::dynsys::DynSystem;
use crate::linalg::sym_eig_bounds;
use crate::rng::SeededRng;
use crate::{par, Error, Matrix, Result, Vector};

/// Scalar candidate evaluator `(t, x) -> V(t, x)`.
pub type ValueFn = Arc<dyn Fn(i64, &Vector) -> f64 + Send + Sync>;

/// Absolute part of the margin tolerance.
pub const ABS_TOL: f64 = 1e-9;
/// Relative part of the margin tolerance (scaled by `|V|`).
pub const REL_TOL: f64 = 1e-9;

const ORIGIN_TIME_SAMPLES: i64 = 8;
const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// A Lyapunov candidate `V(x)` or `V(t, x)`.
#[derive(Clone)]
pub struct CandidateFunction {
    eval: ValueFn,
    quadratic: Option<Matrix>,
    time_dependent: bool,
}

impl fmt::Debug for CandidateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CandidateFunction")
            .field("quadratic", &self.quadratic)
            .field("time_dependent", &self.time_dependent)
            .finish_non_exhaustive()
    }
}

impl CandidateFunction {
    /// Wraps an evaluator, checking `V(t, 0) = 0` on sampled `t`.
    pub fn new<F>(dim: usize, time_dependent: bool, eval: F) -> Result<Self>
    where
        F: Fn(i64, &Vector) -> f64 + Send + Sync + 'static,
    {
        let zero = Vector::zeros(dim);
        let times = if time_dependent { ORIGIN_TIME_SAMPLES } else { 1 };
        for t in 0..times {
            let v = eval(t, &zero);
            if v != 0.0 {
                return Err(Error::InvalidArgument(format!("candidate has V({t}, 0) = {v}, expected 0")));
            }
        }
        Ok(Self {
            eval: Arc::new(eval),
            quadratic: None,
            time_dependent,
        })
    }

    /// `V(x) = x^T P x`.
    pub fn quadratic(p: Matrix) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::Dimension {
                expected: p.nrows(),
                got: p.ncols(),
            });
        }
        let pe = p.clone();
        Ok(Self {
            eval: Arc::new(move |_, x: &Vector| x.dot(&(&pe * x))),
            quadratic: Some(p),
            time_dependent: false,
        })
    }

    pub fn quadratic_p(&self) -> Option<&Matrix> {
        self.quadratic.as_ref()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    #[inline]
    pub fn eval(&self, t: i64, x: &Vector) -> f64 {
        (self.eval)(t, x)
    }

    /// `V(t+1, f(t, x)) - V(t, x)`, dropping `t` from `V` when it is
    /// time-invariant.
    pub fn decrement(&self, sys: &DynSystem, t: i64, x: &Vector) -> f64 {
        let fx = sys.eval(t, x);
        self.eval(t + 1, &fx) - self.eval(t, x)
    }
}

/// One sample `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub t: i64,
    pub x: Vector,
}

/// Finite sample of a domain, possibly with several times per state.
#[derive(Debug, Clone, Default)]
pub struct SampleGrid {
    pub points: Vec<SamplePoint>,
}

/// Component `i` of the Halton sequence in base `b`.
fn halton(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// `count` low-discrepancy unit directions plus the signed coordinate axes.
pub fn directions(dim: usize, count: usize, extra: &[Vector]) -> Vec<Vector> {
    let mut out = Vec::new();
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = Vector::zeros(dim);
            e[i] = s;
            out.push(e);
        }
    }
    for e in extra {
        let n = e.norm();
        if n > 0.0 {
            out.push(e / n);
            out.push(-e / n);
        }
    }
    if dim > 1 {
        let mut rng = SeededRng::new(0xd1ec);
        let mut idx = 1u64;
        while out.len() < 2 * dim + 2 * extra.len() + count {
            let v = if dim <= PRIMES.len() {
                Vector::from_fn(dim, |j, _| 2.0 * halton(idx, PRIMES[j]) - 1.0)
            } else {
                rng.unit_direction(dim)
            };
            idx += 1;
            let n = v.norm();
            if n > 1e-6 {
                out.push(v / n);
            }
        }
    }
    out
}

impl SampleGrid {
    pub fn from_points(points: Vec<SamplePoint>) -> Self {
        Self { points }
    }

    /// Autonomous samples at `t = 0`.
    pub fn from_states(states: impl IntoIterator<Item = Vector>) -> Self {
        Self {
            points: states.into_iter().map(|x| SamplePoint { t: 0, x }).collect(),
        }
    }

    /// Concentric shells with radii geometric from `1e-3 r` to `r`, crossed
    /// with [`directions`] and every entry of `times`.
    pub fn shells(dim: usize, radius: f64, shells: usize, dirs: usize, times: &[i64], extra: &[Vector]) -> Self {
        let ds = directions(dim, dirs, extra);
        let radii = shell_radii(radius, shells);
        let mut points = Vec::with_capacity(times.len() * radii.len() * ds.len());
        for &t in times {
            for r in &radii {
                for d in &ds {
                    points.push(SamplePoint { t, x: d * *r });
                }
            }
        }
        Self { points }
    }

    /// Default grid for a candidate: eigendirections of a quadratic `P` are
    /// always injected.
    pub fn for_candidate(v: &CandidateFunction, dim: usize, radius: f64, times: &[i64]) -> Self {
        let extra: Vec<Vector> = v
            .quadratic_p()
            .map(|p| {
                let e = crate::linalg::symmetrize(p).symmetric_eigen();
                (0..dim).map(|i| e.eigenvectors.column(i).into_owned()).collect()
            })
            .unwrap_or_default();
        Self::shells(dim, radius, 12, 64, times, &extra)
    }

    /// Evenly spaced scalar samples on `[lo, hi]`.
    pub fn line(lo: f64, hi: f64, n: usize) -> Self {
        let n = n.max(2);
        Self::from_states((0..n).map(|i| Vector::from_element(1, lo + (hi - lo) * i as f64 / (n - 1) as f64)))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn nonzero(&self) -> Vec<&SamplePoint> {
        self.points.iter().filter(|p| p.x.iter().any(|v| *v != 0.0)).collect()
    }
}

pub fn shell_radii(radius: f64, shells: usize) -> Vec<f64> {
    let shells = shells.max(1);
    if shells == 1 {
        return vec![radius];
    }
    (0..shells)
        .map(|i| radius * 1e-3f64.powf(1.0 - i as f64 / (shells - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    PosDef,
    Decrease,
    StrictDecrease,
    ExponentialBounds,
    InstabilityRegion,
    SublevelInvariance,
    Bounds,
    Decrement,
    StateLipschitz,
    ParameterLipschitz,
    GradientHypothesis,
    Basin,
    DriftRemainder,
    QuadraticDomination,
    Sandwich,
    Rate,
    GlobalHypotheses,
}

/// Sign requirement on every per-sample margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    /// `margin <= 0`; the worst sample maximises the margin.
    NonPositive,
    /// `margin < 0`; the worst sample maximises the margin.
    Negative,
    /// `margin > 0`; the worst sample minimises the margin.
    Positive,
}

impl Requirement {
    fn holds(self, m: f64) -> bool {
        match self {
            Self::NonPositive => m <= 0.0,
            Self::Negative => m < 0.0,
            Self::Positive => m > 0.0,
        }
    }

    fn worse(self, a: f64, b: f64) -> bool {
        if a.is_nan() {
            return !b.is_nan();
        }
        match self {
            Self::NonPositive | Self::Negative => a > b,
            Self::Positive => a < b,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub passed: bool,
    pub worst_margin: f64,
    /// `(t, x)` of the worst sample.
    pub worst_point: Option<(i64, Vec<f64>)>,
    pub samples_checked: usize,
    pub evidence: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ConditionReport {
    /// Reduces per-sample margins; the lowest index wins ties.
    pub fn from_margins(condition: Condition, req: Requirement, margins: &[(f64, i64, &Vector)]) -> Self {
        let mut worst: Option<usize> = None;
        for (i, m) in margins.iter().enumerate() {
            if worst.is_none_or(|w| req.worse(m.0, margins[w].0)) {
                worst = Some(i);
            }
        }
        let (worst_margin, worst_point) = match worst {
            Some(i) => (margins[i].0, Some((margins[i].1, margins[i].2.iter().copied().collect()))),
            None => (0.0, None),
        };
        Self {
            condition,
            passed: margins.iter().all(|m| req.holds(m.0)),
            worst_margin,
            worst_point,
            samples_checked: margins.len(),
            evidence: "sampled",
            witness: None,
            note: None,
        }
    }

    pub fn vacuous(condition: Condition, note: impl Into<String>) -> Self {
        Self {
            condition,
            passed: true,
            worst_margin: 0.0,
            worst_point: None,
            samples_checked: 0,
            evidence: "sampled",
            witness: None,
            note: Some(note.into()),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Tolerance used by non-strict comparisons at a value of size `v`.
#[inline]
pub fn tolerance(v: f64) -> f64 {
    ABS_TOL + REL_TOL * v.abs()
}

pub fn check_positive_definite(v: &CandidateFunction, grid: &SampleGrid) -> Result<ConditionReport> {
    let pts = grid.nonzero();
    if pts.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let vals = par::map(&pts, |p| v.eval(p.t, &p.x));
    let margins: Vec<_> = vals.iter().zip(&pts).map(|(m, p)| (*m, p.t, &p.x)).collect();
    let mut rep = ConditionReport::from_margins(Condition::PosDef, Requirement::Positive, &margins);
    if let Some(p) = v.quadratic_p() {
        let (lo, _) = sym_eig_bounds(p);
        rep.note = Some(format!("min eigenvalue of P: {lo:e}"));
    }
    Ok(rep)
}

/// Checks `V(t+1, f(t,x)) - V(t,x) <= 0` (or `< 0` when `strict`).
pub fn check_decrease(v: &CandidateFunction, sys: &DynSystem, grid: &SampleGrid, strict: bool) -> Result<ConditionReport> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let pts: Vec<&SamplePoint> = if strict {
        grid.nonzero()
    } else {
        grid.points.iter().collect()
    };
    if pts.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let vals = par::map(&pts, |p| {
        let d = v.decrement(sys, p.t, &p.x);
        if strict {
            d
        } else {
            d - tolerance(v.eval(p.t, &p.x))
        }
    });
    let margins: Vec<_> = vals.iter().zip(&pts).map(|(m, p)| (*m, p.t, &p.x)).collect();
    let (cond, req) = if strict {
        (Condition::StrictDecrease, Requirement::Negative)
    } else {
        (Condition::Decrease, Requirement::NonPositive)
    };
    Ok(ConditionReport::from_margins(cond, req, &margins))
}

/// Checks that one-step images of points in `{V <= c}` stay in it.
pub fn check_sublevel_invariance(
    v: &CandidateFunction,
    sys: &DynSystem,
    c: f64,
    grid_on_level: &SampleGrid,
) -> Result<ConditionReport> {
    if grid_on_level.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let tol = tolerance(c);
    if let Some(p) = grid_on_level.points.iter().find(|p| v.eval(p.t, &p.x) > c + tol) {
        return Err(Error::InvalidArgument(format!(
            "sample {:?} lies outside the sublevel set V <= {c}",
            p.x.as_slice()
        )));
    }
    let vals = par::map(&grid_on_level.points, |p| v.eval(p.t + 1, &sys.eval(p.t, &p.x)) - c - tol);
    let margins: Vec<_> = vals.iter().zip(&grid_on_level.points).map(|(m, p)| (*m, p.t, &p.x)).collect();
    Ok(ConditionReport::from_margins(
        Condition::SublevelInvariance,
        Requirement::NonPositive,
        &margins,
    ))
}

/// Constants of `V <= a||x||^2` and `Delta V <= -b||x||^2` on the grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExponentialConstants {
    pub a: f64,
    pub b: f64,
}

impl ExponentialConstants {
    /// Per-step contraction factor `1 - b/a` of `V`.
    pub fn rate(&self) -> f64 {
        1.0 - self.b / self.a
    }
}

pub fn check_exponential_conditions(
    v: &CandidateFunction,
    sys: &DynSystem,
    grid: &SampleGrid,
) -> Result<(ConditionReport, ExponentialConstants)> {
    let pts = grid.nonzero();
    if pts.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let vals = par::map(&pts, |p| {
        let n2 = p.x.norm_squared();
        (v.eval(p.t, &p.x) / n2, -v.decrement(sys, p.t, &p.x) / n2)
    });
    let a = vals.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let margins: Vec<_> = vals.iter().zip(&pts).map(|(r, p)| (r.1, p.t, &p.x)).collect();
    let mut rep = ConditionReport::from_margins(Condition::ExponentialBounds, Requirement::Positive, &margins);
    let b = rep.worst_margin;
    if !a.is_finite() || !(a > 0.0) {
        rep.passed = false;
        rep.note = Some(format!("upper constant a = {a} is not finite and positive"));
    }
    Ok((rep, ExponentialConstants { a, b }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

/// `alpha(r) = coeff * r^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassKEnvelope {
    pub coeff: f64,
    pub exponent: f64,
    pub side: Side,
}

impl ClassKEnvelope {
    pub fn eval(&self, r: f64) -> f64 {
        self.coeff * r.powf(self.exponent)
    }
}

pub fn fit_class_k_envelopes(v: &CandidateFunction, grid: &SampleGrid) -> Result<(ClassKEnvelope, ClassKEnvelope)> {
    let pts = grid.nonzero();
    if pts.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let samples: Vec<(f64, f64)> = par::map(&pts, |p| (p.x.norm(), v.eval(p.t, &p.x)));
    if let Some((i, _)) = samples.iter().enumerate().find(|(_, s)| !(s.1 > 0.0)) {
        return Err(Error::NotPositiveDefinite(format!(
            "V = {} at nonzero sample {:?}",
            samples[i].1,
            pts[i].x.as_slice()
        )));
    }
    if let Some(p) = v.quadratic_p() {
        let (lo, hi) = sym_eig_bounds(p);
        if !(lo > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("P has minimum eigenvalue {lo:e}")));
        }
        return Ok((
            ClassKEnvelope {
                coeff: lo,
                exponent: 2.0,
                side: Side::Lower,
            },
            ClassKEnvelope {
                coeff: hi,
                exponent: 2.0,
                side: Side::Upper,
            },
        ));
    }
    let logs: Vec<(f64, f64)> = samples.iter().map(|(r, val)| (r.ln(), val.ln())).collect();
    let n = logs.len() as f64;
    let mr = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mr).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mr) * (p.1 - mv)).sum();
    let exponent = if sxx > 0.0 { sxy / sxx } else { 2.0 };
    if !(exponent > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "fitted exponent {exponent} does not give a class-K envelope"
        )));
    }
    let ratios = samples.iter().map(|(r, val)| val / r.powf(exponent));
    let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), q| (lo.min(q), hi.max(q)));
    Ok((
        ClassKEnvelope {
            coeff: lo,
            exponent,
            side: Side::Lower,
        },
        ClassKEnvelope {
            coeff: hi,
            exponent,
            side: Side::Upper,
        },
    ))
}

/// Checks `Delta V > 0` on `U = {x in B_r : V(x) > 0}`.
pub fn check_instability_region(v: &CandidateFunction, sys: &DynSystem, r: f64, grid: &SampleGrid) -> Result<ConditionReport> {
    let ball: Vec<&SamplePoint> = grid.nonzero().into_iter().filter(|p| p.x.norm() <= r).collect();
    let in_u: Vec<&SamplePoint> = ball.into_iter().filter(|p| v.eval(p.t, &p.x) > 0.0).collect();
    if in_u.is_empty() {
        return Err(Error::Inapplicable("V is not positive at any sample of the ball".into()));
    }
    let vals = par::map(&in_u, |p| v.decrement(sys, p.t, &p.x));
    let margins: Vec<_> = vals.iter().zip(&in_u).map(|(m, p)| (*m, p.t, &p.x)).collect();
    let mut rep = ConditionReport::from_margins(Condition::InstabilityRegion, Requirement::Positive, &margins);
    let mut witness = in_u[0];
    for p in &in_u[1..] {
        if p.x.norm() < witness.x.norm() {
            witness = p;
        }
    }
    rep.witness = Some(witness.x.iter().copied().collect());
    Ok(rep)
}

/// Grid points where `|Delta V| <= tol`: a sampled superset of the zero set.
pub fn sample_lasalle_zero_set(v: &CandidateFunction, sys: &DynSystem, grid: &SampleGrid, tol: f64) -> Vec<SamplePoint> {
    let keep = par::map(&grid.points, |p| v.decrement(sys, p.t, &p.x).abs() <= tol);
    grid.points
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_sys(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> DynSystem {
        DynSystem::new(1, true, move |_, x| Vector::from_element(1, f(x[0]))).unwrap()
    }

    fn sq() -> CandidateFunction {
        CandidateFunction::new(1, false, |_, x| x[0] * x[0]).unwrap()
    }

    #[test]
    fn candidate_must_vanish_at_origin() {
        assert!(CandidateFunction::new(1, false, |_, x| x[0] * x[0] + 1.0).is_err());
    }

    #[test]
    fn positive_definite_examples() {
        let grid = SampleGrid::line(-1.0, 1.0, 21);
        let rep = check_positive_definite(&sq(), &grid).unwrap();
        assert!(rep.passed);
        assert_relative_eq!(rep.worst_margin, 0.01, epsilon = 1e-12);

        let v = CandidateFunction::quadratic(Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]))).unwrap();
        let grid = SampleGrid::for_candidate(&v, 2, 1.0, &[0]);
        let rep = check_positive_definite(&v, &grid).unwrap();
        assert!(!rep.passed);
        let wp = rep.worst_point.unwrap().1;
        assert_eq!(wp[0], 0.0);

        let v = CandidateFunction::new(1, false, |_, x| (x[0] * (1.0 - x[0])).powi(2)).unwrap();
        let rep = check_positive_definite(&v, &SampleGrid::line(-1.0, 1.0, 21)).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.worst_point.unwrap().1, vec![1.0]);
    }

    #[test]
    fn decrease_examples() {
        let grid = SampleGrid::line(-2.0, 2.0, 41);
        let rep = check_decrease(&sq(), &scalar_sys(|x| 0.5 * x), &grid, true).unwrap();
        assert!(rep.passed);

        let id = scalar_sys(|x| x);
        assert!(check_decrease(&sq(), &id, &grid, false).unwrap().passed);
        assert!(!check_decrease(&sq(), &id, &grid, true).unwrap().passed);

        let v = CandidateFunction::quadratic(Matrix::from_element(1, 1, 4.0 / 3.0)).unwrap();
        let sys = scalar_sys(|x| 0.5 * x);
        for p in &grid.points {
            assert_relative_eq!(v.decrement(&sys, 0, &p.x), -p.x[0] * p.x[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn sublevel_examples() {
        let grid = SampleGrid::line(-1.0, 1.0, 11);
        assert!(
            check_sublevel_invariance(&sq(), &scalar_sys(|x| 0.5 * x), 1.0, &grid)
                .unwrap()
                .passed
        );
        let rep = check_sublevel_invariance(&sq(), &scalar_sys(|x| 2.0 * x), 1.0, &SampleGrid::line(0.9, 0.9, 2)).unwrap();
        assert!(!rep.passed);
        assert_relative_eq!(rep.worst_margin + 1.0 + tolerance(1.0), 3.24, epsilon = 1e-12);
        let origin = SampleGrid::from_states([Vector::zeros(1)]);
        assert!(
            check_sublevel_invariance(&sq(), &scalar_sys(|x| 2.0 * x), 0.0, &origin)
                .unwrap()
                .passed
        );
    }

    #[test]
    fn exponential_examples() {
        let v = CandidateFunction::new(1, false, |_, x| 2.0 * x[0] * x[0]).unwrap();
        let (rep, c) = check_exponential_conditions(&v, &scalar_sys(|x| 0.5 * x), &SampleGrid::line(-1.0, 1.0, 9)).unwrap();
        assert!(rep.passed);
        assert_relative_eq!(c.a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(c.b, 1.5, epsilon = 1e-12);

        let (rep, c) = check_exponential_conditions(&sq(), &scalar_sys(|x| x), &SampleGrid::line(-1.0, 1.0, 9)).unwrap();
        assert!(!rep.passed);
        assert_eq!(c.b, 0.0);

        let v = CandidateFunction::quadratic(Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 4.0]))).unwrap();
        let sys = DynSystem::new(2, true, |_, x| x * 0.5).unwrap();
        let (_, c) = check_exponential_conditions(&v, &sys, &SampleGrid::for_candidate(&v, 2, 1.0, &[0])).unwrap();
        assert_relative_eq!(c.a, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn class_k_examples() {
        let v = CandidateFunction::quadratic(Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 4.0]))).unwrap();
        let (lo, hi) = fit_class_k_envelopes(&v, &SampleGrid::for_candidate(&v, 2, 1.0, &[0])).unwrap();
        assert_eq!((lo.coeff, hi.coeff, lo.exponent), (1.0, 4.0, 2.0));

        let v = CandidateFunction::new(1, false, |_, x| x[0].powi(4)).unwrap();
        let (lo, hi) = fit_class_k_envelopes(&v, &SampleGrid::shells(1, 1.0, 8, 0, &[0], &[])).unwrap();
        assert_relative_eq!(lo.exponent, 4.0, epsilon = 1e-9);
        assert_relative_eq!(hi.coeff, 1.0, epsilon = 1e-9);

        let (lo, hi) = fit_class_k_envelopes(&sq(), &SampleGrid::line(-1.0, 1.0, 10)).unwrap();
        assert_relative_eq!(lo.coeff, 1.0, epsilon = 1e-12);
        assert_relative_eq!(hi.coeff, 1.0, epsilon = 1e-12);
        assert_relative_eq!(lo.exponent, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn instability_examples() {
        let grid = SampleGrid::shells(1, 1.0, 6, 0, &[0], &[]);
        let rep = check_instability_region(&sq(), &scalar_sys(|x| 2.0 * x), 1.0, &grid).unwrap();
        assert!(rep.passed);
        assert_relative_eq!(rep.witness.unwrap()[0].abs(), 1e-3, epsilon = 1e-15);

        let v = CandidateFunction::new(1, false, |_, x| x[0] * x[0] / 3.0).unwrap();
        let rep = check_instability_region(&v, &scalar_sys(|x| 2.0 * x), 1.0, &grid).unwrap();
        assert!(rep.passed);
        assert_relative_eq!(rep.worst_margin, 1e-6, epsilon = 1e-12);

        let rep = check_instability_region(&sq(), &scalar_sys(|x| 0.5 * x), 1.0, &grid).unwrap();
        assert!(!rep.passed);

        let neg = CandidateFunction::new(1, false, |_, x| -x[0] * x[0]).unwrap();
        assert!(matches!(
            check_instability_region(&neg, &scalar_sys(|x| 2.0 * x), 1.0, &grid),
            Err(Error::Inapplicable(_))
        ));
    }

    #[test]
    fn lasalle_examples() {
        let grid = SampleGrid::line(-1.0, 1.0, 21);
        assert_eq!(sample_lasalle_zero_set(&sq(), &scalar_sys(|x| -x), &grid, 1e-12).len(), 21);
        let tol = 0.03;
        let z = sample_lasalle_zero_set(&sq(), &scalar_sys(|x| 0.5 * x), &grid, tol);
        assert!(!z.is_empty());
        assert!(z.iter().all(|p| p.x[0].abs() <= (tol / 0.75f64).sqrt() + 1e-12));
        let z = sample_lasalle_zero_set(&sq(), &scalar_sys(|x| 0.5 * x), &SampleGrid::line(0.5, 1.0, 5), 1e-6);
        assert!(z.is_empty());
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let grid = SampleGrid::line(-1.0, 1.0, 5);
        let rep = check_decrease(&sq(), &scalar_sys(|x| x), &grid, true).unwrap();
        assert_eq!(rep.worst_point.unwrap().1, vec![-1.0]);
    }
}
