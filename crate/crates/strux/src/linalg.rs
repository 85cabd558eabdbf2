//! Small dense linear-algebra helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const JITTER: f64 = 1e-9;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factor; on failure add `JITTER·I` and retry once.
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = m.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let j = m + DMatrix::<f64>::identity(n, n) * (JITTER * scale);
    Cholesky::new(j).ok_or_else(|| Error::Numerical("matrix not positive definite after jitter".into()))
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky_jitter(m)?.inverse()))
}

pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let c = cholesky_jitter(m)?;
    Ok(2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= tol.max(1e-10) * (1.0 + m.abs().max()) && min_eigenvalue(m) >= -tol
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

/// Solve `a x = b` for SPD `a` with jitter fallback.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(cholesky_jitter(a)?.solve(b))
}

/// Build a lower-triangular factor from packed row-major entries, with the
/// diagonal given on log scale.
pub fn lower_from_packed(n: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = if i == j { packed[k].exp() } else { packed[k] };
            k += 1;
        }
    }
    l
}

/// Inverse of [`lower_from_packed`] for a positive-definite covariance.
pub fn packed_from_cov(cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let l = cholesky_jitter(cov)?.l();
    let n = cov.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            out.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    Ok(out)
}
