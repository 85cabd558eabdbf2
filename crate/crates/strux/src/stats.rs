//! Scalar densities, special functions and samplers shared across modules.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn norm_logpdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// log Φ(z), accurate deep in the lower tail.
pub fn norm_logcdf(z: f64) -> f64 {
    if z > -20.0 {
        norm_cdf(z).ln()
    } else {
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - 0.5 * LN_2PI + series.ln()
    }
}

/// Gaussian log density with variance `var`.
pub fn gauss_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-sum-exp over terms sorted first, so the value does not depend on the
/// order the terms are supplied in.
pub fn logsumexp_canonical(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    logsumexp(&v)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn ln_choose(n: u32, k: u32) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Multivariate normal log density.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = linalg::cholesky_jitter(cov)?;
    Ok(mvn_logpdf_chol(x, mean, &chol))
}

pub fn mvn_logpdf_chol(x: &DVector<f64>, mean: &DVector<f64>, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let d = x.len() as f64;
    let r = x - mean;
    let l = chol.l();
    let z = l.solve_lower_triangular(&r).expect("triangular solve");
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d * LN_2PI + logdet + z.norm_squared())
}

pub fn std_normal_vec(rng: &mut Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn mvn_draw(rng: &mut Rng, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let chol = linalg::cholesky_jitter(cov)?;
    Ok(mean + chol.l() * std_normal_vec(rng, mean.len()))
}

/// Wishart(df, scale) draw by the Bartlett decomposition; df may be real.
pub fn wishart_draw(rng: &mut Rng, df: f64, scale: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if df <= d as f64 - 1.0 {
        return Err(Error::Invalid(format!("Wishart degrees of freedom {df} must exceed {}", d - 1)));
    }
    let l = linalg::cholesky_jitter(scale)?.l();
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let la = l * a;
    Ok(linalg::symmetrize(&(&la * la.transpose())))
}

/// Inverse-Wishart(df, scale): Σ such that Σ⁻¹ ~ Wishart(df, scale⁻¹).
pub fn inv_wishart_draw(rng: &mut Rng, df: f64, scale: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sinv = linalg::spd_inverse(scale)?;
    let w = wishart_draw(rng, df, &sinv)?;
    linalg::spd_inverse(&w)
}

/// log density of IW(Σ | df, scale).
pub fn inv_wishart_logpdf(sigma: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let d = sigma.nrows() as f64;
    let ls = linalg::logdet_spd(scale)?;
    let lsig = linalg::logdet_spd(sigma)?;
    let sinv = linalg::spd_inverse(sigma)?;
    let tr = (scale * sinv).trace();
    let mut lmgamma = d * (d - 1.0) / 4.0 * PI.ln();
    for j in 0..sigma.nrows() {
        lmgamma += ln_gamma((df - j as f64) / 2.0);
    }
    Ok(0.5 * df * ls - 0.5 * df * d * 2f64.ln() - lmgamma - 0.5 * (df + d + 1.0) * lsig - 0.5 * tr)
}

/// Draw an index with probabilities proportional to `exp(logw)`.
pub fn categorical_log(rng: &mut Rng, logw: &[f64]) -> usize {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.iter().rposition(|x| *x > 0.0).unwrap_or(0)
}

/// Probabilists' Gauss–Hermite rule: ∫ f(x) φ(x) dx ≈ Σ w_i f(x_i), Σ w_i = 1.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize to remove eigen-solver asymmetry.
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let k = n - 1 - i;
        x[i] = 0.5 * (pairs[i].0 - pairs[k].0);
        w[i] = 0.5 * (pairs[i].1 + pairs[k].1);
    }
    let s: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= s;
    }
    (x, w)
}

pub fn gauss_hermite_64() -> &'static (Vec<f64>, Vec<f64>) {
    static GH: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GH.get_or_init(|| gauss_hermite(64))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Empirical quantile with linear interpolation.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}
