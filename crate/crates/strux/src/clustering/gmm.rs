use nalgebra::{DMatrix, DVector};

use super::{check_rows, kmeans, KmeansInit, Partition};
use crate::error::{invalid, Result};
use crate::stats::{logsumexp, LN_2PI};
use crate::par;

const COLLAPSE_LOGDET: f64 = -690.775_527_898_213_7; // ln(1e-300)
const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovMode {
    Full,
    Diagonal,
}

impl CovMode {
    /// Full covariances up to ten dimensions, diagonal above.
    pub fn default_for(dim: usize) -> Self {
        if dim <= 10 {
            CovMode::Full
        } else {
            CovMode::Diagonal
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub k: usize,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub weights: Vec<f64>,
    pub mode: CovMode,
}

impl GaussianMixture {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn free_parameters(&self) -> usize {
        let d = self.dim();
        let cov = match self.mode {
            CovMode::Full => d * (d + 1) / 2,
            CovMode::Diagonal => d,
        };
        self.k - 1 + self.k * (d + cov)
    }

    /// Per-component log(w_c) + log N(x | m_c, S_c), given precomputed factors.
    fn component_logs(&self, x: &DVector<f64>, facs: &[Factor]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let r = x - &self.means[c];
                let q = match &facs[c].chol {
                    Some(ch) => {
                        let z = ch.l().solve_lower_triangular(&r).expect("nonsingular factor");
                        z.norm_squared()
                    }
                    None => r.iter().zip(facs[c].diag.iter()).map(|(v, s)| v * v / s).sum(),
                };
                self.weights[c].ln() - 0.5 * (x.len() as f64 * LN_2PI + facs[c].logdet + q)
            })
            .collect()
    }

    /// Log density of one point under the mixture.
    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        let facs = self.factors()?.0;
        Ok(logsumexp(&self.component_logs(x, &facs)))
    }

    /// Posterior component probabilities for one point.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let facs = self.factors()?.0;
        let logs = self.component_logs(x, &facs);
        let lse = logsumexp(&logs);
        Ok(logs.into_iter().map(|l| (l - lse).exp()).collect())
    }

    /// Returns the factors and whether a ridge had to be added.
    fn factors(&self) -> Result<(Vec<Factor>, bool)> {
        let mut ridged = false;
        let mut out = Vec::with_capacity(self.k);
        for s in &self.covariances {
            let (f, r) = Factor::new(s, self.mode)?;
            ridged |= r;
            out.push(f);
        }
        Ok((out, ridged))
    }
}

struct Factor {
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    diag: Vec<f64>,
    logdet: f64,
}

impl Factor {
    fn new(s: &DMatrix<f64>, mode: CovMode) -> Result<(Self, bool)> {
        let d = s.nrows();
        let attempt = |m: &DMatrix<f64>| -> Option<Factor> {
            match mode {
                CovMode::Full => {
                    let ch = m.clone().cholesky()?;
                    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                    (logdet.is_finite() && logdet > COLLAPSE_LOGDET).then_some(Factor { chol: Some(ch), diag: Vec::new(), logdet })
                }
                CovMode::Diagonal => {
                    let diag: Vec<f64> = (0..d).map(|i| m[(i, i)]).collect();
                    let logdet: f64 = diag.iter().map(|v| v.ln()).sum();
                    (diag.iter().all(|v| *v > 0.0) && logdet > COLLAPSE_LOGDET).then_some(Factor { chol: None, diag, logdet })
                }
            }
        };
        if let Some(f) = attempt(s) {
            return Ok((f, false));
        }
        let ridged = s + DMatrix::identity(d, d) * RIDGE;
        match attempt(&ridged) {
            Some(f) => Ok((f, true)),
            None => Err(crate::Error::Numerical("mixture covariance singular after ridge".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// n×k responsibilities at the returned parameters.
    pub responsibilities: DMatrix<f64>,
    pub loglik_trace: Vec<f64>,
    pub loglik: f64,
    pub bic: f64,
    /// A covariance collapsed and was ridged with 1e-6·I.
    pub ridged: bool,
    pub converged: bool,
    /// Argmax responsibility, ties to the lowest id.
    pub partition: Partition,
}

fn m_step(xs: &[DVector<f64>], resp: &DMatrix<f64>, mode: CovMode) -> GaussianMixture {
    let (n, k) = resp.shape();
    let d = xs[0].len();
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for c in 0..k {
        let nk: f64 = resp.column(c).iter().sum();
        let nk_safe = nk.max(f64::MIN_POSITIVE);
        let mut m = DVector::zeros(d);
        for (i, x) in xs.iter().enumerate() {
            m.axpy(resp[(i, c)], x, 1.0);
        }
        m /= nk_safe;
        let mut s = DMatrix::zeros(d, d);
        for (i, x) in xs.iter().enumerate() {
            let r = x - &m;
            match mode {
                CovMode::Full => s.ger(resp[(i, c)], &r, &r, 1.0),
                CovMode::Diagonal => {
                    for j in 0..d {
                        s[(j, j)] += resp[(i, c)] * r[j] * r[j];
                    }
                }
            }
        }
        s /= nk_safe;
        crate::linalg::symmetrize_in_place(&mut s);
        means.push(m);
        covs.push(s);
        weights.push(nk / n as f64);
    }
    let tot: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= tot;
    }
    GaussianMixture { k, means, covariances: covs, weights, mode }
}

fn e_step(xs: &[DVector<f64>], g: &GaussianMixture) -> Result<(DMatrix<f64>, f64, bool)> {
    let (facs, ridged) = g.factors()?;
    let rows = par::map_slice(xs, |_, x| {
        let logs = g.component_logs(x, &facs);
        let lse = logsumexp(&logs);
        (logs.into_iter().map(|l| (l - lse).exp()).collect::<Vec<_>>(), lse)
    });
    let mut resp = DMatrix::zeros(xs.len(), g.k);
    let mut lls = Vec::with_capacity(xs.len());
    for (i, (r, lse)) in rows.into_iter().enumerate() {
        let s: f64 = r.iter().sum();
        for (c, v) in r.into_iter().enumerate() {
            resp[(i, c)] = v / s;
        }
        lls.push(lse);
    }
    Ok((resp, par::sum_ordered(&lls), ridged))
}

/// EM for a k-component Gaussian mixture, initialized from k-means++.
pub fn gmm_em(data: &[Vec<f64>], k: usize, mode: CovMode, tol: f64, max_iter: usize, seed: u64) -> Result<GmmFit> {
    check_rows(data)?;
    let n = data.len();
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if n <= k {
        return invalid(format!("need more units ({n}) than components ({k})"));
    }
    let xs: Vec<DVector<f64>> = data.iter().map(|r| DVector::from_column_slice(r)).collect();
    let km = kmeans(data, k, KmeansInit::PlusPlus, 100, seed)?;
    let mut resp = DMatrix::zeros(n, k);
    for (i, &c) in km.partition.assignment.iter().enumerate() {
        resp[(i, c)] = 1.0;
    }
    // Empty k-means clusters get a uniform sliver so the M-step is defined.
    for c in km.partition.empty_clusters() {
        for i in 0..n {
            resp[(i, c)] = 1.0 / n as f64;
        }
    }
    let mut g = m_step(&xs, &resp, mode);
    let mut trace = Vec::new();
    let mut ridged = false;
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let (r, ll, rg) = e_step(&xs, &g)?;
        ridged |= rg;
        resp = r;
        let prev = trace.last().copied();
        trace.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() <= tol * (1.0 + ll.abs()) {
                converged = true;
                break;
            }
        }
        g = m_step(&xs, &resp, mode);
    }
    let loglik = *trace.last().expect("at least one iteration");
    if ridged {
        for s in &mut g.covariances {
            if Factor::new(s, mode).map(|(_, r)| r).unwrap_or(true) {
                *s += DMatrix::identity(s.nrows(), s.nrows()) * RIDGE;
            }
        }
    }
    let bic = -2.0 * loglik + g.free_parameters() as f64 * (n as f64).ln();
    let assignment = (0..n)
        .map(|i| {
            let row = resp.row(i);
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(GmmFit { mixture: g, responsibilities: resp, loglik_trace: trace, loglik, bic, ridged, converged, partition: Partition { assignment, k } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSelection {
    pub best_k: usize,
    pub bics: Vec<(usize, f64)>,
    pub best: GmmFit,
}

/// Fit each k and keep the smallest BIC; ties go to the smaller k.
pub fn gmm_select(data: &[Vec<f64>], k_range: &[usize], mode: CovMode, seed: u64) -> Result<GmmSelection> {
    if k_range.is_empty() {
        return invalid("empty k range");
    }
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut best: Option<GmmFit> = None;
    let mut bics = Vec::new();
    for &k in &ks {
        let fit = gmm_em(data, k, mode, 1e-10, 500, crate::rng::mix(seed, &[k as u64]))?;
        bics.push((k, fit.bic));
        if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
            best = Some(fit);
        }
    }
    let best = best.expect("non-empty range");
    Ok(GmmSelection { best_k: best.mixture.k, bics, best })
}
