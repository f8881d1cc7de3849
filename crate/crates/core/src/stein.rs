//! Spectral classification and Stein (discrete Lyapunov) equation solvers.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::dynsys::{fit_pooled_envelope, transition_norms, EnvelopeFitOptions, ExponentialEnvelope, LinearTV};
use crate::linalg::{eigenvalues, kron, operator_norm, spectral_radius, sym_eig_bounds, symmetrize};
use crate::rng::SeededRng;
use crate::{Error, Matrix, Result, Vector};

/// Gate for the algebraic conditions `|lambda| = 1` and `lambda_i lambda_j = 1`.
pub const TOL_MARGIN: f64 = 1e-9;
const RANK_TOL: f64 = 1e-8;
const CLUSTER_TOL: f64 = 1e-6;
const GAMMA_GRID: usize = 32;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    /// Eigenvalues as `[re, im]` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
    pub eigen_moduli: Vec<f64>,
    pub spectral_radius: f64,
    pub schur: bool,
    /// No eigenvalue pair has `lambda_i lambda_j = 1`.
    pub solvable: bool,
    /// Smallest `|lambda_i lambda_j - 1|` over pairs, including `i = j`.
    pub solvability_margin: f64,
    /// `None` without unit-modulus eigenvalues; otherwise whether each has
    /// equal geometric and algebraic multiplicity.
    pub marginal_multiplicity_ok: Option<bool>,
}

impl SpectrumReport {
    /// Stability verdict for `x+ = Ax`.
    pub fn stable(&self) -> bool {
        self.spectral_radius <= 1.0 + TOL_MARGIN && self.marginal_multiplicity_ok.unwrap_or(true)
    }
}

pub fn classify_linear(a: &Matrix) -> Result<SpectrumReport> {
    let eig = eigenvalues(a)?;
    let moduli: Vec<f64> = eig.iter().map(|l| l.norm()).collect();
    let rho = moduli.iter().copied().fold(0.0, f64::max);
    let mut margin = f64::INFINITY;
    for i in 0..eig.len() {
        for j in i..eig.len() {
            margin = margin.min((eig[i] * eig[j] - 1.0).norm());
        }
    }

    let marginal: Vec<Complex<f64>> = eig.iter().copied().filter(|l| (l.norm() - 1.0).abs() <= TOL_MARGIN).collect();
    let marginal_ok = if marginal.is_empty() {
        None
    } else {
        let scale = operator_norm(a).max(1.0);
        let ca: DMatrix<Complex<f64>> = a.map(|v| Complex::new(v, 0.0));
        let mut ok = true;
        let mut seen: Vec<Complex<f64>> = Vec::new();
        for l in &marginal {
            if seen.iter().any(|s| (s - l).norm() <= CLUSTER_TOL) {
                continue;
            }
            seen.push(*l);
            let cluster: Vec<&Complex<f64>> = eig.iter().filter(|m| (*m - l).norm() <= CLUSTER_TOL).collect();
            let algebraic = cluster.len();
            let centre = cluster.iter().copied().sum::<Complex<f64>>() / algebraic as f64;
            let shifted = &ca - DMatrix::<Complex<f64>>::identity(a.nrows(), a.ncols()) * centre;
            let sv = shifted.singular_values();
            let geometric = sv.iter().filter(|s| **s <= RANK_TOL * scale).count();
            if geometric < algebraic {
                ok = false;
            }
        }
        Some(ok)
    };

    Ok(SpectrumReport {
        eigenvalues: eig.iter().map(|l| [l.re, l.im]).collect(),
        eigen_moduli: moduli,
        spectral_radius: rho,
        schur: rho < 1.0 - TOL_MARGIN,
        solvable: margin > TOL_MARGIN,
        solvability_margin: margin,
        marginal_multiplicity_ok: marginal_ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SteinMethod {
    Kronecker,
    Series,
}

#[derive(Debug, Clone, Serialize)]
pub struct SteinSolution {
    #[serde(serialize_with = "ser_matrix")]
    pub p: Matrix,
    pub method: SteinMethod,
    /// `||A^T P A - P + Q||` in operator norm.
    pub residual: f64,
    pub positive_definite: bool,
    pub min_eig: f64,
    pub max_eig: f64,
    /// Solution is unique by the pairwise eigenvalue condition although `A`
    /// is not Schur.
    pub unique_without_schur: bool,
    pub warning: Option<String>,
}

pub(crate) fn ser_matrix<S: serde::Serializer>(m: &Matrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

fn check_square(a: &Matrix, q: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if q.shape() != a.shape() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: q.nrows(),
        });
    }
    Ok(())
}

/// Requires `Q` symmetric positive definite.
pub fn check_pd(q: &Matrix) -> Result<()> {
    let asym = (q - q.transpose()).amax();
    if asym > 1e-12 * q.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("Q is not symmetric (asymmetry {asym:e})")));
    }
    let (lo, _) = sym_eig_bounds(q);
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("Q has minimum eigenvalue {lo:e}")));
    }
    Ok(())
}

pub fn stein_residual(a: &Matrix, p: &Matrix, q: &Matrix) -> f64 {
    operator_norm(&(a.transpose() * p * a - p + q))
}

fn finish(a: &Matrix, q: &Matrix, p: Matrix, method: SteinMethod, schur: bool) -> SteinSolution {
    let p = symmetrize(&p);
    let residual = stein_residual(a, &p, q);
    let (min_eig, max_eig) = sym_eig_bounds(&p);
    let tol = 1e-9 * operator_norm(q);
    let warning = (residual > tol).then(|| format!("residual {residual:e} exceeds {tol:e}: ill-conditioned"));
    SteinSolution {
        p,
        method,
        residual,
        positive_definite: min_eig > 0.0,
        min_eig,
        max_eig,
        unique_without_schur: !schur,
        warning,
    }
}

/// Solves `A^T P A - P = -Q` through the vectorised `n^2 x n^2` system.
pub fn solve_stein_kron(a: &Matrix, q: &Matrix) -> Result<SteinSolution> {
    check_square(a, q)?;
    check_pd(q)?;
    let spec = classify_linear(a)?;
    if !spec.solvable {
        return Err(Error::SingularStein {
            product: 1.0 + spec.solvability_margin,
        });
    }
    let n = a.nrows();
    let at = a.transpose();
    let m = kron(&at, &at) - Matrix::identity(n * n, n * n);
    let rhs = -Vector::from_column_slice(q.as_slice());
    let lu = m.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("vectorised Stein system is singular".into()))?;
    // one step of iterative refinement
    let r = &rhs - &m * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let p = Matrix::from_column_slice(n, n, x.as_slice());
    Ok(finish(a, q, p, SteinMethod::Kronecker, spec.schur))
}

/// Partial sums of `sum_t (A^T)^t Q A^t`.
pub fn solve_stein_series(a: &Matrix, q: &Matrix, tol: f64) -> Result<SteinSolution> {
    const MAX_TERMS: usize = 10_000_000;
    check_square(a, q)?;
    check_pd(q)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 - TOL_MARGIN {
        return Err(Error::DivergentSeries { spectral_radius: rho });
    }
    let stop = tol * (1.0 - rho) / (1.0 + rho);
    let at = a.transpose();
    let mut term = q.clone();
    let mut p = q.clone();
    for _ in 0..MAX_TERMS {
        term = &at * term * a;
        if operator_norm(&term) < stop {
            p += &term;
            return Ok(finish(a, q, p, SteinMethod::Series, true));
        }
        p += &term;
    }
    Err(Error::Numerical(format!(
        "Stein series did not reach {stop:e} in {MAX_TERMS} terms"
    )))
}

/// Certificate `V(x) = -x^T P1 x` of instability for `x+ = Ax`.
#[derive(Debug, Clone, Serialize)]
pub struct InstabilityCertificate {
    #[serde(serialize_with = "ser_matrix")]
    pub p1: Matrix,
    pub gamma: f64,
    pub solution: SteinSolution,
    /// A state with `V > 0`.
    pub witness: Vec<f64>,
    /// Smallest `V(Ax) - V(x)` over sampled unit directions with `V >= 0`.
    pub min_increase: f64,
    pub directions_checked: usize,
}

impl InstabilityCertificate {
    pub fn value(&self, x: &Vector) -> f64 {
        -(x.transpose() * &self.p1 * x)[(0, 0)]
    }
}

pub fn instability_certificate(a: &Matrix, q: &Matrix) -> Result<InstabilityCertificate> {
    check_square(a, q)?;
    check_pd(q)?;
    let spec = classify_linear(a)?;
    let rho = spec.spectral_radius;
    if rho <= 1.0 + TOL_MARGIN {
        return Err(Error::InvalidArgument(format!(
            "instability certificate needs spectral radius > 1, got {rho}"
        )));
    }
    let (gamma, solution) = if spec.solvable {
        (1.0, solve_stein_kron(a, q)?)
    } else {
        let mut found = None;
        for i in 1..=GAMMA_GRID {
            let gamma = rho.powf(i as f64 / (GAMMA_GRID + 1) as f64);
            let a1 = a / gamma;
            let s1 = classify_linear(&a1)?;
            if s1.solvable && s1.spectral_radius > 1.0 + TOL_MARGIN {
                found = Some((gamma, solve_stein_kron(&a1, q)?));
                break;
            }
        }
        found.ok_or_else(|| Error::CertificateNotFound(format!("no admissible gamma in (1, {rho})")))?
    };
    if solution.positive_definite {
        return Err(Error::CertificateNotFound("rescaled solution is positive definite".into()));
    }
    let p1 = solution.p.clone();
    let eig = p1.clone().symmetric_eigen();
    let imin = eig.eigenvalues.imin();
    let witness: Vector = eig.eigenvectors.column(imin).into_owned();

    let n = a.nrows();
    let mut dirs: Vec<Vector> = (0..n).map(|i| eig.eigenvectors.column(i).into_owned()).collect();
    for i in 0..n {
        let mut e = Vector::zeros(n);
        e[i] = 1.0;
        dirs.push(e);
    }
    let mut rng = SeededRng::new(0x5eed);
    dirs.extend((0..256).map(|_| rng.unit_direction(n)));
    let v = |x: &Vector| -(x.transpose() * &p1 * x)[(0, 0)];
    let mut min_increase = f64::INFINITY;
    for d in &dirs {
        for s in [1.0, -1.0] {
            let x = d * s;
            if v(&x) >= 0.0 {
                min_increase = min_increase.min(v(&(a * &x)) - v(&x));
            }
        }
    }
    if !(min_increase > 0.0) {
        return Err(Error::CertificateNotFound(format!(
            "increase condition fails on sampled directions (min {min_increase:e})"
        )));
    }
    Ok(InstabilityCertificate {
        p1,
        gamma,
        solution,
        witness: witness.iter().copied().collect(),
        min_increase,
        directions_checked: dirs.len() * 2,
    })
}

/// Uniform decay bound on `||Phi(t, t0)||` over the sampled `t0`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransitionDecay {
    pub envelope: ExponentialEnvelope,
    /// Largest sampled `||Phi(t, t0)||`.
    pub uniform_bound: f64,
}

pub fn verify_transition_decay(sys: &LinearTV, t0_samples: &[i64], horizon: usize) -> Result<TransitionDecay> {
    if horizon < 2 {
        return Err(Error::InvalidArgument("horizon must be at least 2".into()));
    }
    if t0_samples.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let series: Vec<Vec<f64>> = t0_samples.iter().map(|&t0| transition_norms(sys, t0, horizon)).collect();
    let mut m: f64 = 0.0;
    for (s, t0) in series.iter().zip(t0_samples) {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite transition matrix from t0={t0}")));
        }
        m = m.max(s.iter().copied().fold(0.0, f64::max));
        let last = *s.last().unwrap();
        if last >= 1.0 {
            return Err(Error::DecayNotDetected(format!(
                "||Phi(t0+{horizon}, t0)|| = {last} at t0={t0}"
            )));
        }
    }
    let envelope =
        fit_pooled_envelope(&series, 1.0, EnvelopeFitOptions::default()).map_err(|e| Error::DecayNotDetected(e.to_string()))?;
    Ok(TransitionDecay {
        envelope,
        uniform_bound: m,
    })
}

/// Query-able solution `P(t) = sum_tau Phi(tau,t)^T Q(tau) Phi(tau,t)`.
#[derive(Clone)]
pub struct TvLyapunov {
    sys: LinearTV,
    qgen: Arc<dyn Fn(i64) -> Matrix + Send + Sync>,
    terms: usize,
    decay: TransitionDecay,
    q_bounds: (f64, f64),
    cache: Arc<RwLock<HashMap<i64, Matrix>>>,
}

impl fmt::Debug for TvLyapunov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TvLyapunov")
            .field("terms", &self.terms)
            .field("decay", &self.decay)
            .finish_non_exhaustive()
    }
}

impl TvLyapunov {
    /// Number of summands kept per `P(t)`.
    pub fn terms(&self) -> usize {
        self.terms
    }

    pub fn decay(&self) -> &TransitionDecay {
        &self.decay
    }

    /// Sampled `(min, max)` eigenvalues of `Q(t)`.
    pub fn q_bounds(&self) -> (f64, f64) {
        self.q_bounds
    }

    pub fn q(&self, t: i64) -> Matrix {
        (self.qgen)(t)
    }

    pub fn at(&self, t: i64) -> Matrix {
        if let Some(p) = self.cache.read().unwrap_or_else(|e| e.into_inner()).get(&t) {
            return p.clone();
        }
        let n = self.sys.dim();
        let mut phi = Matrix::identity(n, n);
        let mut p = Matrix::zeros(n, n);
        for s in 0..self.terms {
            let tau = t + s as i64;
            p += phi.transpose() * (self.qgen)(tau) * &phi;
            phi = self.sys.at(tau) * phi;
        }
        let p = symmetrize(&p);
        self.cache.write().unwrap_or_else(|e| e.into_inner()).insert(t, p.clone());
        p
    }

    /// `||A(t)^T P(t+1) A(t) - P(t) + Q(t)||`.
    pub fn residual(&self, t: i64) -> f64 {
        let a = self.sys.at(t);
        operator_norm(&(a.transpose() * self.at(t + 1) * &a - self.at(t) + self.q(t)))
    }
}

/// Default sample of start times for decay checks around `t_start`.
pub fn default_t0_samples(sys: &LinearTV, t_start: i64) -> Vec<i64> {
    let count = sys.period().map_or(16, |p| (2 * p).clamp(2, 64)) as i64;
    (t_start..t_start + count).collect()
}

pub fn solve_tv_lyapunov<Q>(sys: &LinearTV, qgen: Q, t_start: i64, tail_tol: f64) -> Result<TvLyapunov>
where
    Q: Fn(i64) -> Matrix + Send + Sync + 'static,
{
    const DECAY_HORIZON: usize = 64;
    const MAX_TERMS: usize = 100_000;
    if !(tail_tol > 0.0) {
        return Err(Error::InvalidArgument("tail tolerance must be positive".into()));
    }
    let samples = default_t0_samples(sys, t_start);
    let decay = verify_transition_decay(sys, &samples, DECAY_HORIZON).map_err(|e| Error::NotUniformlyStable(e.to_string()))?;
    let mut q_lo = f64::INFINITY;
    let mut q_hi: f64 = 0.0;
    for &t in &samples {
        let q = qgen(t);
        if q.shape() != (sys.dim(), sys.dim()) {
            return Err(Error::Dimension {
                expected: sys.dim(),
                got: q.nrows(),
            });
        }
        check_pd(&q)?;
        let (lo, hi) = sym_eig_bounds(&q);
        q_lo = q_lo.min(lo);
        q_hi = q_hi.max(hi);
    }
    let env = decay.envelope;
    let decay2 = (-2.0 * env.rate).exp();
    let scale = q_hi * env.gain * env.gain / (1.0 - decay2);
    // tail after K terms: scale * decay2^K
    let terms = if scale <= tail_tol {
        1
    } else {
        ((tail_tol / scale).ln() / decay2.ln()).ceil().max(1.0) as usize
    };
    if terms > MAX_TERMS {
        return Err(Error::NotUniformlyStable(format!("series needs {terms} terms")));
    }
    Ok(TvLyapunov {
        sys: sys.clone(),
        qgen: Arc::new(qgen),
        terms,
        decay,
        q_bounds: (q_lo, q_hi),
        cache: Arc::new(RwLock::new(HashMap::new())),
    })
}
