//! Averaged fields, the averaging error budget and the averaged Lyapunov
//! function for `x(k+1) = x(k) + eps * phi(k, x(k))`.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::certcheck::{tolerance, CandidateFunction, Condition, ConditionReport, Requirement, SampleGrid, SamplePoint};
use crate::converse::estimate_lipschitz;
use crate::dynsys::MapFn;
use crate::linalg::{central_gradient, central_jacobian, operator_norm};
use crate::rng::SeededRng;
use crate::{par, Error, Result, Vector};

/// Relative gap between the `T` and `T/2` partial averages above which a
/// warning is attached.
pub const GAP_WARNING: f64 = 1e-2;

/// `phibar(x) = (1/T) sum_{k<T} phi(k, x)` evaluated on demand and memoised.
#[derive(Clone)]
pub struct AveragedField {
    phi: MapFn,
    pub t_used: usize,
    pub convergence_gap: f64,
    pub warning: Option<String>,
    cache: Arc<RwLock<HashMap<Vec<u64>, Vector>>>,
}

impl fmt::Debug for AveragedField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AveragedField")
            .field("t_used", &self.t_used)
            .field("convergence_gap", &self.convergence_gap)
            .field("warning", &self.warning)
            .finish_non_exhaustive()
    }
}

fn partial_average(phi: &MapFn, x: &Vector, terms: usize) -> Vector {
    let mut acc = Vector::zeros(x.len());
    for k in 0..terms {
        acc += phi(k as i64, x);
    }
    acc / terms as f64
}

impl AveragedField {
    pub fn eval(&self, x: &Vector) -> Vector {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(v) = self.cache.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return v.clone();
        }
        let v = partial_average(&self.phi, x, self.t_used);
        self.cache.write().unwrap_or_else(|e| e.into_inner()).insert(key, v.clone());
        v
    }

    pub fn phi(&self) -> &MapFn {
        &self.phi
    }
}

pub fn estimate_average(phi: MapFn, probes: &[Vector], t_max: usize) -> Result<AveragedField> {
    if t_max < 4 {
        return Err(Error::InvalidArgument("T_max must be at least 4".into()));
    }
    let gaps = par::map(probes, |x| {
        let n = x.norm();
        if n == 0.0 {
            return 0.0;
        }
        (partial_average(&phi, x, t_max) - partial_average(&phi, x, t_max / 2)).norm() / n
    });
    let gap = gaps.into_iter().fold(0.0, f64::max);
    Ok(AveragedField {
        phi,
        t_used: t_max,
        convergence_gap: gap,
        warning: (gap > GAP_WARNING).then(|| format!("partial averages differ by {gap:e}: field may not be averageable")),
        cache: Arc::new(RwLock::new(HashMap::new())),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaTable {
    /// Growth/Lipschitz bound `||phi(k,x)|| <= L ||x||`.
    pub l: f64,
    /// `(T, sigma(T))`, nonincreasing in `T`.
    pub entries: Vec<(usize, f64)>,
    /// Sampled values before monotone enforcement.
    pub raw: Vec<f64>,
}

impl SigmaTable {
    pub fn sigma(&self, t: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == t).map(|e| e.1)
    }
}

/// `sum_{k'=k}^{k+T} phi(k', x)`, the `T+1`-term partial sum.
fn drift_sum(phi: &MapFn, k: i64, x: &Vector, t: usize) -> Vector {
    let mut acc = Vector::zeros(x.len());
    for j in 0..=t {
        acc += phi(k + j as i64, x);
    }
    acc
}

/// Samples `sigma(T) = max ||sum - T phibar|| / (T L ||x||)` and replaces
/// each value by the largest value at any larger `T`.
pub fn estimate_sigma(phibar: &AveragedField, probes: &[SamplePoint], t_list: &[usize], l: f64) -> Result<SigmaTable> {
    let probes: Vec<&SamplePoint> = probes.iter().filter(|p| p.x.norm() > 0.0).collect();
    if probes.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if !(l > 0.0) {
        return Err(Error::InvalidArgument("L must be positive".into()));
    }
    let mut ts: Vec<usize> = t_list.iter().copied().filter(|t| *t >= 1).collect();
    ts.sort_unstable();
    ts.dedup();
    if ts.is_empty() {
        return Err(Error::InvalidArgument("T list has no positive entries".into()));
    }
    let bars: Vec<Vector> = par::map(&probes, |p| phibar.eval(&p.x));
    let raw: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let vals = par::map_range(probes.len(), |i| {
                let p = probes[i];
                let dev = drift_sum(phibar.phi(), p.t, &p.x, t) - &bars[i] * t as f64;
                dev.norm() / (t as f64 * l * p.x.norm())
            });
            vals.into_iter().fold(0.0, f64::max)
        })
        .collect();
    let mut sigma = raw.clone();
    for i in (0..sigma.len().saturating_sub(1)).rev() {
        sigma[i] = sigma[i].max(sigma[i + 1]);
    }
    Ok(SigmaTable {
        l,
        entries: ts.into_iter().zip(sigma).collect(),
        raw,
    })
}

/// `eps L^2 T (1+L)^T`, computed in log space.
fn growth_term(t: usize, eps: f64, l: f64) -> Result<f64> {
    if eps == 0.0 || l == 0.0 {
        return Ok(0.0);
    }
    let log = (eps * l * l * t as f64).ln() + t as f64 * (1.0 + l).ln();
    if log > f64::MAX.ln() {
        return Err(Error::Overflow { l, t });
    }
    Ok(log.exp())
}

/// `nu(T, eps) = L sigma(T) + eps L^2 T (1+L)^T`.
pub fn nu(t: usize, eps: f64, l: f64, sigma_t: f64) -> Result<f64> {
    if t == 0 || !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "nu needs T >= 1 and eps in [0,1], got T={t}, eps={eps}"
        )));
    }
    Ok(l * sigma_t + growth_term(t, eps, l)?)
}

/// `mu(T, eps) = nu + eps T (L + nu)^2`.
pub fn mu(t: usize, eps: f64, l: f64, sigma_t: f64) -> Result<f64> {
    let n = nu(t, eps, l, sigma_t)?;
    Ok(n + eps * t as f64 * (l + n).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Eps2Rule {
    /// `delta / (2 T (L + nu)^2)`.
    #[default]
    SquaredSum,
    /// `delta / (2 T (L + nu^2))`.
    SumOfSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `sigma(T) <= delta/4`.
    Sigma,
    /// `L sigma(T) <= delta/4`.
    LSigma,
}

#[derive(Debug, Clone, Serialize)]
pub struct AveragingBudget {
    pub delta: f64,
    pub t_delta: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub eps_delta: f64,
    pub nu_at_budget: f64,
    pub mu_at_budget: f64,
    pub threshold_rule: ThresholdRule,
    pub eps2_rule: Eps2Rule,
    /// Largest `mu(T_delta, eps)` over the probe grid.
    pub max_probed_mu: f64,
    pub probes: usize,
}

const EPS_PROBES: usize = 20;

fn try_budget(delta: f64, table: &SigmaTable, rule: ThresholdRule, eps2_rule: Eps2Rule) -> Result<Option<AveragingBudget>> {
    let l = table.l;
    let scale = match rule {
        ThresholdRule::Sigma => 1.0,
        ThresholdRule::LSigma => l,
    };
    let Some(&(t, sigma)) = table.entries.iter().find(|e| scale * e.1 <= delta / 4.0) else {
        return Ok(None);
    };
    let log_den = (4.0 * l * l * t as f64).ln() + t as f64 * (1.0 + l).ln();
    let eps1 = (delta.ln() - log_den).exp();
    if !(eps1 > 1e-300) {
        return Ok(None);
    }
    let eps1 = eps1.min(1.0);
    let nu1 = nu(t, eps1, l, sigma)?;
    let eps2 = match eps2_rule {
        Eps2Rule::SquaredSum => delta / (2.0 * t as f64 * (l + nu1).powi(2)),
        Eps2Rule::SumOfSquare => delta / (2.0 * t as f64 * (l + nu1 * nu1)),
    };
    let eps_delta = eps1.min(eps2).min(1.0);
    let mut max_mu: f64 = 0.0;
    for i in 0..EPS_PROBES {
        let eps = eps_delta * i as f64 / (EPS_PROBES - 1) as f64;
        max_mu = max_mu.max(mu(t, eps, l, sigma)?);
    }
    if max_mu > delta {
        return Ok(None);
    }
    Ok(Some(AveragingBudget {
        delta,
        t_delta: t,
        eps1,
        eps2,
        eps_delta,
        nu_at_budget: nu(t, eps_delta, l, sigma)?,
        mu_at_budget: mu(t, eps_delta, l, sigma)?,
        threshold_rule: rule,
        eps2_rule,
        max_probed_mu: max_mu,
        probes: EPS_PROBES,
    }))
}

/// Smallest tabulated `T` meeting the threshold and the step-size bound
/// `eps_delta = min(eps1, eps2)`, post-verified on an `eps` grid.
pub fn budget_for_delta(delta: f64, table: &SigmaTable, eps2_rule: Eps2Rule) -> Result<AveragingBudget> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    for rule in [ThresholdRule::Sigma, ThresholdRule::LSigma] {
        if let Some(b) = try_budget(delta, table, rule, eps2_rule)? {
            return Ok(b);
        }
    }
    Err(Error::BudgetInfeasible { threshold: delta / 4.0 })
}

/// One sample `(k, x, T, eps)` for [`check_drift_remainder`].
#[derive(Debug, Clone)]
pub struct DriftSample {
    pub k: i64,
    pub x: Vector,
    pub t: usize,
    pub eps: f64,
}

/// Checks `||x(k+T+1) - x - eps T phibar(x)|| <= eps T nu(T, eps) ||x||`.
pub fn check_drift_remainder(phibar: &AveragedField, table: &SigmaTable, samples: &[DriftSample]) -> Result<ConditionReport> {
    if samples.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let phi = phibar.phi();
    let margins = par::map(samples, |s| -> Result<f64> {
        let sigma = table
            .sigma(s.t)
            .ok_or_else(|| Error::InvalidArgument(format!("T={} is not tabulated", s.t)))?;
        let mut x = s.x.clone();
        for j in 0..=s.t {
            x = &x + phi(s.k + j as i64, &x) * s.eps;
        }
        let g = x - &s.x - phibar.eval(&s.x) * (s.eps * s.t as f64);
        let bound = s.eps * s.t as f64 * nu(s.t, s.eps, table.l, sigma)? * s.x.norm();
        Ok(g.norm() - bound - tolerance(bound))
    });
    let margins: Vec<f64> = margins.into_iter().collect::<Result<_>>()?;
    let rows: Vec<_> = margins.iter().zip(samples).map(|(m, s)| (*m, s.k, &s.x)).collect();
    Ok(ConditionReport::from_margins(
        Condition::DriftRemainder,
        Requirement::NonPositive,
        &rows,
    ))
}

/// Hypothesis constants of the base candidate `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaseConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AveragedConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

#[derive(Clone, Serialize)]
pub struct AveragedCertificate {
    pub base_constants: BaseConstants,
    pub t_star: usize,
    pub eps_c: f64,
    pub l: f64,
    pub constants: AveragedConstants,
    pub budget: AveragingBudget,
    pub sigma: SigmaTable,
    pub gradient_check: ConditionReport,
    pub average_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip)]
    v: CandidateFunction,
    #[serde(skip)]
    phi: MapFn,
}

impl fmt::Debug for AveragedCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AveragedCertificate")
            .field("base_constants", &self.base_constants)
            .field("t_star", &self.t_star)
            .field("eps_c", &self.eps_c)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl AveragedCertificate {
    /// `V'(k, x) = sum_{k'=k}^{k+T*} V(x(k'; k, x))` along
    /// `x+ = x + eps phi(k, x)`.
    pub fn evaluate(&self, k: i64, x: &Vector, eps: f64) -> f64 {
        let mut z = x.clone();
        let mut sum = self.v.eval(0, &z);
        for j in 0..self.t_star {
            z = &z + (self.phi)(k + j as i64, &z) * eps;
            sum += self.v.eval(0, &z);
        }
        sum
    }

    pub fn step(&self, k: i64, x: &Vector, eps: f64) -> Vector {
        x + (self.phi)(k, x) * eps
    }
}

#[derive(Debug, Clone)]
pub struct AveragingOptions {
    /// Probe radius for every sampled constant.
    pub radius: f64,
    /// Probe states per time.
    pub probes: usize,
    /// Start times `0..k_range` used for probes.
    pub k_range: i64,
    pub t_list: Vec<usize>,
    pub t_max: usize,
    pub eps2_rule: Eps2Rule,
    pub seed: u64,
    /// Overrides for `c1..c4`.
    pub constants: Option<BaseConstants>,
}

impl Default for AveragingOptions {
    fn default() -> Self {
        Self {
            radius: 1.0,
            probes: 24,
            k_range: 16,
            t_list: (0..9).map(|i| 1usize << i).collect(),
            t_max: 1024,
            eps2_rule: Eps2Rule::default(),
            seed: 0,
            constants: None,
        }
    }
}

impl AveragingOptions {
    /// `(k, x)` probes: the signed axes scaled to the radius plus random
    /// points in the ball, at each start time.
    pub fn probe_points(&self, dim: usize) -> Vec<SamplePoint> {
        let mut rng = SeededRng::new(self.seed ^ 0xa7e);
        let mut xs = vec![Vector::zeros(dim)];
        for i in 0..dim {
            let mut e = Vector::zeros(dim);
            e[i] = self.radius;
            xs.push(-&e);
            xs.push(e);
        }
        while xs.len() < self.probes.max(2) {
            xs.push(rng.in_ball(dim, self.radius));
        }
        (0..self.k_range.max(1))
            .flat_map(|k| xs.iter().map(move |x| SamplePoint { t: k, x: x.clone() }))
            .collect()
    }
}

/// Sampled `c1..c4` for `V` against `phibar`, with the gradient hypothesis
/// `dV/dx phibar(x) <= -c3 ||x||^2` reported separately.
pub fn estimate_base_constants(
    v: &CandidateFunction,
    phibar: &AveragedField,
    states: &[Vector],
) -> Result<(BaseConstants, ConditionReport)> {
    let xs: Vec<&Vector> = states.iter().filter(|x| x.norm() > 0.0).collect();
    if xs.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let rows = par::map(&xs, |x| {
        let n2 = x.norm_squared();
        let h = 1e-6 * x.norm().max(1.0);
        let f = |z: &Vector| v.eval(0, z);
        let grad = central_gradient(f, x, h);
        let hh = 1e-4 * x.norm().max(1.0);
        let hess = central_jacobian(|z: &Vector| central_gradient(f, z, h), x, hh);
        let val = v.eval(0, x);
        (
            val / n2,
            -grad.dot(&phibar.eval(x)) / n2,
            (grad.norm() / x.norm()).max(0.5 * operator_norm(&hess)),
        )
    });
    let c1 = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let c2 = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let c4 = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let margins: Vec<_> = rows.iter().zip(&xs).map(|(r, x)| (r.1, 0, *x)).collect();
    let report = ConditionReport::from_margins(Condition::GradientHypothesis, Requirement::Positive, &margins);
    let c3 = report.worst_margin * (1.0 - 1e-4);
    Ok((BaseConstants { c1, c2, c3, c4 }, report))
}

/// Builds `V'` with `delta = c3 / (2 c4)` and `(T*, eps_c)` from the budget.
pub fn build_averaged_lyapunov(
    v: &CandidateFunction,
    phi: MapFn,
    dim: usize,
    opts: &AveragingOptions,
) -> Result<AveragedCertificate> {
    let probes = opts.probe_points(dim);
    let states: Vec<Vector> = probes.iter().filter(|p| p.t == 0).map(|p| p.x.clone()).collect();
    let phibar = estimate_average(phi.clone(), &states, opts.t_max)?;
    let l = estimate_lipschitz(|k, x| phi(k, x), &SampleGrid::from_points(probes.clone()))?;
    if !(l > 0.0) {
        return Err(Error::Inapplicable("slow field vanishes on every probe".into()));
    }
    let sigma = estimate_sigma(&phibar, &probes, &opts.t_list, l)?;
    let (estimated, gradient_check) = estimate_base_constants(v, &phibar, &states)?;
    let base = opts.constants.unwrap_or(estimated);
    if !(base.c1 > 0.0) {
        return Err(Error::Inapplicable(format!(
            "V is not positive definite on probes (c1 = {})",
            base.c1
        )));
    }
    if !gradient_check.passed || !(base.c3 > 0.0) {
        return Err(Error::Inapplicable(format!(
            "gradient hypothesis fails: worst margin {:e} at {:?}",
            gradient_check.worst_margin, gradient_check.worst_point
        )));
    }
    let delta = base.c3 / (2.0 * base.c4);
    let budget = budget_for_delta(delta, &sigma, opts.eps2_rule)?;
    let t = budget.t_delta;
    let eps_c = budget.eps_delta;
    let growth = 1.0 + eps_c * l;
    let a2 = base.c2 * (0..=t).map(|k| growth.powi(k as i32)).sum::<f64>();
    let a4 = (t + 1) as f64 * base.c4 * growth.powi(2 * t as i32);
    Ok(AveragedCertificate {
        base_constants: base,
        t_star: t,
        eps_c,
        l,
        constants: AveragedConstants {
            a1: base.c1,
            a2,
            a3: t as f64 * base.c3 / 2.0,
            a4,
        },
        budget,
        sigma,
        gradient_check,
        average_gap: phibar.convergence_gap,
        warning: phibar.warning.clone(),
        v: v.clone(),
        phi,
    })
}

/// Checks `a1||x||^2 <= V' <= a2||x||^2` and
/// `V'(k+1, x + eps phi) - V'(k, x) <= -eps a3 ||x||^2`.
pub fn verify_averaged(
    cert: &AveragedCertificate,
    samples: &[(i64, Vector)],
    eps_values: &[f64],
) -> Result<Vec<ConditionReport>> {
    if samples.is_empty() || eps_values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let c = &cert.constants;
    let pairs: Vec<(usize, f64)> = (0..samples.len())
        .flat_map(|i| eps_values.iter().map(move |e| (i, *e)))
        .collect();
    let rows = par::map(&pairs, |&(i, eps)| {
        let (k, x) = (&samples[i].0, &samples[i].1);
        let n2 = x.norm_squared();
        let w = cert.evaluate(*k, x, eps);
        let bounds = (c.a1 * n2 - w).max(w - c.a2 * n2) - tolerance(w);
        let w_next = cert.evaluate(k + 1, &cert.step(*k, x, eps), eps);
        let dec = w_next - w + eps * c.a3 * n2 - tolerance(w);
        (bounds, dec)
    });
    let pick = |f: fn(&(f64, f64)) -> f64| -> Vec<(f64, i64, &Vector)> {
        rows.iter()
            .zip(&pairs)
            .map(|(r, &(i, _))| (f(r), samples[i].0, &samples[i].1))
            .collect()
    };
    Ok(vec![
        ConditionReport::from_margins(Condition::Bounds, Requirement::NonPositive, &pick(|r| r.0)),
        ConditionReport::from_margins(Condition::Decrement, Requirement::NonPositive, &pick(|r| r.1)),
    ])
}
