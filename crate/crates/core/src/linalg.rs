//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::Complex;

use crate::{Error, Matrix, Result, Vector};

/// Spectral (induced 2-) norm.
pub fn operator_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn sym_eig_bounds(m: &Matrix) -> (f64, f64) {
    let eig = symmetrize(m).symmetric_eigenvalues();
    (eig.min(), eig.max())
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex<f64>>> {
    if !a.is_square() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    if a.nrows() == 1 {
        return Ok(vec![Complex::new(a[(0, 0)], 0.0)]);
    }
    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// Kronecker product.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Matrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Largest root of `a r^2 + b r + c = 0` for `a > 0, c < 0` (the positive one),
/// or of the linear equation when `a == 0`.
pub fn positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a == 0.0 {
        return if b > 0.0 && c < 0.0 { Some(-c / b) } else { None };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    // Cancellation-free form of (-b + sqrt(disc)) / 2a.
    let s = disc.sqrt();
    let root = if b >= 0.0 {
        (-2.0 * c) / (b + s)
    } else {
        (-b + s) / (2.0 * a)
    };
    (root > 0.0).then_some(root)
}

/// Central-difference Jacobian of `f` at `x` with a fixed step.
pub fn central_jacobian<F>(f: F, x: &Vector, h: f64) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.clone();
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        cols.push((fp - fm) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    Matrix::from_fn(m, n, |i, j| cols[j][i])
}

pub fn central_gradient<F>(f: F, x: &Vector, h: f64) -> Vector
where
    F: Fn(&Vector) -> f64,
{
    let mut xp = x.clone();
    Vector::from_fn(x.len(), |j, _| {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        (fp - fm) / (2.0 * h)
    })
}

pub fn is_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}
