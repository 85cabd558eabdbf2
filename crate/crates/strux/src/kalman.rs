//! Linear Kalman filter, Rauch–Tung–Striebel smoother and unscented filter.
//!
//! Conventions: the prior describes the state *before* the first
//! observation, so every step starts with a time update. A `None`
//! observation makes the step predict-only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_jitter, symmetrize_in_place};
use crate::stats::LN_2PI;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let mut cov = cov;
        symmetrize_in_place(&mut cov);
        Self { mean, cov }
    }

    pub fn scalar(mean: f64, var: f64) -> Self {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone)]
pub struct LinearStateSpace {
    pub transition: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub state_noise: DMatrix<f64>,
    pub obs_map: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
}

impl LinearStateSpace {
    /// Scalar local-level style model: x_t = a x_{t-1} + c + w, y = h x + v.
    pub fn scalar(a: f64, c: f64, w: f64, h: f64, v: f64) -> Self {
        Self {
            transition: DMatrix::from_element(1, 1, a),
            drift: DVector::from_element(1, c),
            state_noise: DMatrix::from_element(1, 1, w),
            obs_map: DMatrix::from_element(1, 1, h),
            obs_noise: DMatrix::from_element(1, 1, v),
        }
    }

    pub fn validate(&self, prior: &GaussianBelief) -> Result<()> {
        let n = self.transition.nrows();
        let m = self.obs_map.nrows();
        let ok = self.transition.is_square()
            && self.drift.len() == n
            && self.state_noise.shape() == (n, n)
            && self.obs_map.ncols() == n
            && self.obs_noise.shape() == (m, m)
            && prior.dim() == n
            && prior.cov.shape() == (n, n);
        if !ok {
            return Err(Error::Dimension("linear state space and prior dimensions disagree".into()));
        }
        if !linalg::is_psd(&self.state_noise, 1e-9) || !linalg::is_psd(&self.obs_noise, 1e-9) {
            return Err(Error::Invalid("noise covariance is not positive semidefinite".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_map.nrows()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutput {
    pub predicted: Vec<GaussianBelief>,
    pub filtered: Vec<GaussianBelief>,
    pub smoothed: Vec<GaussianBelief>,
    /// One-step-ahead observation mean per step.
    pub obs_pred: Vec<DVector<f64>>,
    pub loglik: f64,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.filtered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered.is_empty()
    }
}

fn gaussian_loglik(innov: &DVector<f64>, s: &DMatrix<f64>) -> Result<(f64, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let chol = cholesky_jitter(s)?;
    let l = chol.l();
    let z = l.solve_lower_triangular(innov).ok_or_else(|| Error::Numerical("innovation solve".into()))?;
    let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((-0.5 * (innov.len() as f64 * LN_2PI + logdet + z.norm_squared()), chol))
}

/// Kalman filter over `series`; each element is an observation vector or `None`.
pub fn kf_filter(series: &[Option<DVector<f64>>], model: &LinearStateSpace, prior: &GaussianBelief) -> Result<FilterOutput> {
    if series.is_empty() {
        return Err(Error::Invalid("empty series".into()));
    }
    model.validate(prior)?;
    let a = &model.transition;
    let h = &model.obs_map;
    let mut out = FilterOutput {
        predicted: Vec::with_capacity(series.len()),
        filtered: Vec::with_capacity(series.len()),
        ..Default::default()
    };
    let mut m = prior.mean.clone();
    let mut p = prior.cov.clone();
    let mut loglik = 0.0;
    for y in series {
        let mp = a * &m + &model.drift;
        let mut pp = a * &p * a.transpose() + &model.state_noise;
        symmetrize_in_place(&mut pp);
        out.predicted.push(GaussianBelief { mean: mp.clone(), cov: pp.clone() });
        out.obs_pred.push(h * &mp);
        match y {
            None => {
                m = mp;
                p = pp;
            }
            Some(y) => {
                if y.len() != model.obs_dim() {
                    return Err(Error::Dimension(format!("observation length {} != {}", y.len(), model.obs_dim())));
                }
                let innov = y - h * &mp;
                let mut s = h * &pp * h.transpose() + &model.obs_noise;
                symmetrize_in_place(&mut s);
                let (ll, chol) = gaussian_loglik(&innov, &s)?;
                loglik += ll;
                // K = P H' S^{-1}
                let pht = &pp * h.transpose();
                let k = chol.solve(&pht.transpose()).transpose();
                m = &mp + &k * innov;
                // Joseph form keeps the update PSD.
                let n = mp.len();
                let ikh = DMatrix::<f64>::identity(n, n) - &k * h;
                p = &ikh * &pp * ikh.transpose() + &k * &model.obs_noise * k.transpose();
                symmetrize_in_place(&mut p);
            }
        }
        out.filtered.push(GaussianBelief { mean: m.clone(), cov: p.clone() });
    }
    out.loglik = loglik;
    Ok(out)
}

/// Rauch–Tung–Striebel backward pass. Fills `smoothed`.
pub fn rts_smooth(out: &FilterOutput, model: &LinearStateSpace) -> Result<FilterOutput> {
    let n = out.filtered.len();
    if n == 0 || out.predicted.len() != n {
        return Err(Error::Invalid("filter output has no filtered beliefs".into()));
    }
    let a = &model.transition;
    let mut smoothed = vec![out.filtered[n - 1].clone(); n];
    for t in (0..n - 1).rev() {
        let f = &out.filtered[t];
        let pred = &out.predicted[t + 1];
        let chol = cholesky_jitter(&pred.cov).map_err(|_| Error::Numerical(format!("singular predicted covariance at step {}", t + 1)))?;
        // C = P_t A' (P⁻_{t+1})^{-1}
        let pat = &f.cov * a.transpose();
        let c = chol.solve(&pat.transpose()).transpose();
        let next = &smoothed[t + 1];
        let mean = &f.mean + &c * (&next.mean - &pred.mean);
        let mut cov = &f.cov + &c * (&next.cov - &pred.cov) * c.transpose();
        symmetrize_in_place(&mut cov);
        smoothed[t] = GaussianBelief { mean, cov };
    }
    let mut res = out.clone();
    res.smoothed = smoothed;
    Ok(res)
}

/// Unscented-transform settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self { alpha: 1e-3, beta: 2.0, kappa: 0.0 }
    }
}

impl UkfParams {
    pub fn lambda(&self, l: usize) -> f64 {
        self.alpha * self.alpha * (l as f64 + self.kappa) - l as f64
    }

    /// (mean weights, covariance weights) for state dimension `l`.
    pub fn weights(&self, l: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if l == 0 {
            return Err(Error::Invalid("state dimension must be at least 1".into()));
        }
        let lam = self.lambda(l);
        let denom = l as f64 + lam;
        if denom <= 0.0 {
            return Err(Error::Invalid(format!("L + lambda = {denom} must be positive")));
        }
        let mut wm = vec![1.0 / (2.0 * denom); 2 * l + 1];
        let mut wc = wm.clone();
        wm[0] = lam / denom;
        wc[0] = lam / denom + (1.0 - self.alpha * self.alpha + self.beta);
        Ok((wm, wc))
    }
}

/// State-space model with nonlinear mean functions.
pub struct NonlinearStateSpace<'a> {
    pub transition_fn: &'a (dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    pub obs_fn: &'a (dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    pub state_noise: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
}

fn sigma_points(m: &DVector<f64>, p: &DMatrix<f64>, scale: f64) -> Result<Vec<DVector<f64>>> {
    let l = m.len();
    let mut scaled = p * scale;
    symmetrize_in_place(&mut scaled);
    let sq = cholesky_jitter(&scaled)?.l();
    let mut pts = Vec::with_capacity(2 * l + 1);
    pts.push(m.clone());
    for i in 0..l {
        pts.push(m + sq.column(i));
    }
    for i in 0..l {
        pts.push(m - sq.column(i));
    }
    Ok(pts)
}

/// Weighted mean computed as an offset from the centre point, which keeps the
/// large-magnitude weights of small `alpha` from cancelling badly.
fn ut_mean(ys: &[DVector<f64>], wm: &[f64]) -> DVector<f64> {
    let mut acc = DVector::<f64>::zeros(ys[0].len());
    for i in 1..ys.len() {
        acc += (&ys[i] - &ys[0]) * wm[i];
    }
    &ys[0] + acc
}

fn ut_cross(xs: &[DVector<f64>], mx: &DVector<f64>, ys: &[DVector<f64>], my: &DVector<f64>, wc: &[f64]) -> DMatrix<f64> {
    let mut c = DMatrix::<f64>::zeros(mx.len(), my.len());
    for i in 0..xs.len() {
        let dx = &xs[i] - mx;
        let dy = &ys[i] - my;
        c += (dx * dy.transpose()) * wc[i];
    }
    c
}

/// Unscented Kalman filter.
pub fn ukf_filter(series: &[Option<DVector<f64>>], model: &NonlinearStateSpace<'_>, prior: &GaussianBelief, ut: UkfParams) -> Result<FilterOutput> {
    if series.is_empty() {
        return Err(Error::Invalid("empty series".into()));
    }
    let l = prior.dim();
    if model.state_noise.shape() != (l, l) {
        return Err(Error::Dimension("state noise does not match prior".into()));
    }
    let (wm, wc) = ut.weights(l)?;
    let scale = l as f64 + ut.lambda(l);
    let mut out = FilterOutput {
        predicted: Vec::with_capacity(series.len()),
        filtered: Vec::with_capacity(series.len()),
        ..Default::default()
    };
    let mut m = prior.mean.clone();
    let mut p = prior.cov.clone();
    let mut loglik = 0.0;
    for y in series {
        let xs = sigma_points(&m, &p, scale)?;
        let fx: Vec<DVector<f64>> = xs.iter().map(|x| (model.transition_fn)(x)).collect();
        let mp = ut_mean(&fx, &wm);
        let mut pp = ut_cross(&fx, &mp, &fx, &mp, &wc) + &model.state_noise;
        symmetrize_in_place(&mut pp);
        out.predicted.push(GaussianBelief { mean: mp.clone(), cov: pp.clone() });
        let xs2 = sigma_points(&mp, &pp, scale)?;
        let hy: Vec<DVector<f64>> = xs2.iter().map(|x| (model.obs_fn)(x)).collect();
        let my = ut_mean(&hy, &wm);
        out.obs_pred.push(my.clone());
        match y {
            None => {
                m = mp;
                p = pp;
            }
            Some(y) => {
                if model.obs_noise.shape() != (y.len(), y.len()) || my.len() != y.len() {
                    return Err(Error::Dimension("observation dimension mismatch".into()));
                }
                let mut s = ut_cross(&hy, &my, &hy, &my, &wc) + &model.obs_noise;
                symmetrize_in_place(&mut s);
                let pxy = ut_cross(&xs2, &mp, &hy, &my, &wc);
                let innov = y - &my;
                let (ll, chol) = gaussian_loglik(&innov, &s)?;
                loglik += ll;
                let k = chol.solve(&pxy.transpose()).transpose();
                m = &mp + &k * innov;
                p = &pp - &k * &s * k.transpose();
                symmetrize_in_place(&mut p);
            }
        }
        out.filtered.push(GaussianBelief { mean: m.clone(), cov: p.clone() });
    }
    out.loglik = loglik;
    Ok(out)
}

/// Unscented RTS smoother: the backward gain uses the unscented cross
/// covariance between consecutive states.
pub fn ukf_smooth(out: &FilterOutput, model: &NonlinearStateSpace<'_>, ut: UkfParams) -> Result<FilterOutput> {
    let n = out.filtered.len();
    if n == 0 {
        return Err(Error::Invalid("filter output has no filtered beliefs".into()));
    }
    let l = out.filtered[0].dim();
    let (wm, wc) = ut.weights(l)?;
    let scale = l as f64 + ut.lambda(l);
    let mut smoothed = vec![out.filtered[n - 1].clone(); n];
    for t in (0..n - 1).rev() {
        let f = &out.filtered[t];
        let xs = sigma_points(&f.mean, &f.cov, scale)?;
        let fx: Vec<DVector<f64>> = xs.iter().map(|x| (model.transition_fn)(x)).collect();
        let mp = ut_mean(&fx, &wm);
        let mut pp = ut_cross(&fx, &mp, &fx, &mp, &wc) + &model.state_noise;
        symmetrize_in_place(&mut pp);
        let cross = ut_cross(&xs, &f.mean, &fx, &mp, &wc);
        let chol = cholesky_jitter(&pp)?;
        let g = chol.solve(&cross.transpose()).transpose();
        let next = &smoothed[t + 1];
        let mean = &f.mean + &g * (&next.mean - &mp);
        let mut cov = &f.cov + &g * (&next.cov - &pp) * g.transpose();
        symmetrize_in_place(&mut cov);
        smoothed[t] = GaussianBelief { mean, cov };
    }
    let mut res = out.clone();
    res.smoothed = smoothed;
    Ok(res)
}

/// Draw one state path from the smoothing distribution of a linear model by
/// forward filtering, backward sampling.
pub fn ffbs_draw(out: &FilterOutput, model: &LinearStateSpace, eps: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let n = out.filtered.len();
    if eps.len() != n {
        return Err(Error::Dimension("one standard normal vector per step required".into()));
    }
    let a = &model.transition;
    let mut path = vec![DVector::<f64>::zeros(0); n];
    let last = &out.filtered[n - 1];
    path[n - 1] = &last.mean + cholesky_jitter(&last.cov)?.l() * &eps[n - 1];
    for t in (0..n - 1).rev() {
        let f = &out.filtered[t];
        let pred = &out.predicted[t + 1];
        let chol = cholesky_jitter(&pred.cov)?;
        let pat = &f.cov * a.transpose();
        let j = chol.solve(&pat.transpose()).transpose();
        let mean = &f.mean + &j * (&path[t + 1] - &pred.mean);
        let mut cov = &f.cov - &j * a * &f.cov;
        symmetrize_in_place(&mut cov);
        path[t] = mean + cholesky_jitter(&cov)?.l() * &eps[t];
    }
    Ok(path)
}

/// Scalar fast path used in the inner loops of the auction model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarStep {
    pub pred_mean: f64,
    pub pred_var: f64,
    pub filt_mean: f64,
    pub filt_var: f64,
}

/// Scalar Kalman filter with per-step drift. Returns steps and log likelihood.
pub fn kf_scalar(
    obs: &[f64],
    a: f64,
    drift: &[f64],
    w: f64,
    v: f64,
    m0: f64,
    p0: f64,
) -> (Vec<ScalarStep>, f64) {
    let mut steps = Vec::with_capacity(obs.len());
    let mut m = m0;
    let mut p = p0;
    let mut ll = 0.0;
    for (t, y) in obs.iter().enumerate() {
        let mp = a * m + drift[t];
        let pp = a * a * p + w;
        let s = pp + v;
        let e = y - mp;
        ll += -0.5 * (LN_2PI + s.ln() + e * e / s);
        // Gain uses the predicted variance of the current step.
        let k = pp / s;
        m = mp + k * e;
        p = (1.0 - k) * pp;
        steps.push(ScalarStep { pred_mean: mp, pred_var: pp, filt_mean: m, filt_var: p });
    }
    (steps, ll)
}

/// Scalar RTS smoother for the output of [`kf_scalar`]; returns (mean, var).
pub fn rts_scalar(steps: &[ScalarStep], a: f64) -> Vec<(f64, f64)> {
    let n = steps.len();
    let mut out = vec![(0.0, 0.0); n];
    if n == 0 {
        return out;
    }
    out[n - 1] = (steps[n - 1].filt_mean, steps[n - 1].filt_var);
    for t in (0..n - 1).rev() {
        let c = a * steps[t].filt_var / steps[t + 1].pred_var;
        let (ms, vs) = out[t + 1];
        out[t] = (
            steps[t].filt_mean + c * (ms - steps[t + 1].pred_mean),
            steps[t].filt_var + c * c * (vs - steps[t + 1].pred_var),
        );
    }
    out
}

/// Nonlinear model on plain slices, for likelihood-only passes.
pub struct SliceStateSpace<'a> {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub transition_fn: &'a (dyn Fn(&[f64], &mut [f64]) + Sync),
    pub obs_fn: &'a (dyn Fn(&[f64], &mut [f64]) + Sync),
    pub state_noise: &'a DMatrix<f64>,
    pub obs_noise: &'a DMatrix<f64>,
}

/// In-place lower Cholesky of the n×n row-major `a`; retries once with the
/// same jitter as [`cholesky_jitter`]. Upper triangle is zeroed.
fn chol_flat(a: &mut [f64], n: usize, work: &mut [f64]) -> Result<()> {
    work[..n * n].copy_from_slice(&a[..n * n]);
    if chol_try(a, n) {
        return Ok(());
    }
    let scale = (0..n).fold(0.0f64, |m, i| m.max(work[i * n + i].abs())).max(1.0);
    a[..n * n].copy_from_slice(&work[..n * n]);
    for i in 0..n {
        a[i * n + i] += linalg::JITTER * scale;
    }
    if chol_try(a, n) {
        Ok(())
    } else {
        Err(Error::Numerical("matrix not positive definite after jitter".into()))
    }
}

fn chol_try(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for i in 0..j {
            a[i * n + j] = 0.0;
        }
    }
    true
}

/// Solve L z = b in place.
fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// UKF log likelihood without storing beliefs. Same recursion as
/// [`ukf_filter`] with every observation present; `series` holds one
/// observation vector per step.
pub fn ukf_loglik(series: &[Vec<f64>], model: &SliceStateSpace<'_>, prior: &GaussianBelief, ut: UkfParams) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Invalid("empty series".into()));
    }
    let l = model.state_dim;
    let ny = model.obs_dim;
    if prior.dim() != l || model.state_noise.shape() != (l, l) || model.obs_noise.shape() != (ny, ny) {
        return Err(Error::Dimension("model dimensions do not match".into()));
    }
    let (wm, wc) = ut.weights(l)?;
    let scale = l as f64 + ut.lambda(l);
    let np = 2 * l + 1;
    let mut m: Vec<f64> = prior.mean.iter().copied().collect();
    let mut p: Vec<f64> = (0..l * l).map(|i| prior.cov[(i / l, i % l)]).collect();
    let mut sq = vec![0.0; l * l];
    let mut work = vec![0.0; l.max(ny) * l.max(ny)];
    let mut xs = vec![0.0; np * l];
    let mut fx = vec![0.0; np * l];
    let mut hy = vec![0.0; np * ny];
    let mut mp = vec![0.0; l];
    let mut my = vec![0.0; ny];
    let mut pp = vec![0.0; l * l];
    let mut s = vec![0.0; ny * ny];
    let mut pxy = vec![0.0; l * ny];
    let mut innov = vec![0.0; ny];
    let mut kt = vec![0.0; ny * l];
    let mut loglik = 0.0;

    let sigma = |mean: &[f64], cov: &[f64], sq: &mut [f64], work: &mut [f64], xs: &mut [f64]| -> Result<()> {
        for i in 0..l {
            for j in 0..l {
                sq[i * l + j] = 0.5 * (cov[i * l + j] + cov[j * l + i]) * scale;
            }
        }
        chol_flat(sq, l, work)?;
        xs[..l].copy_from_slice(mean);
        for c in 0..l {
            for r in 0..l {
                xs[(1 + c) * l + r] = mean[r] + sq[r * l + c];
                xs[(1 + l + c) * l + r] = mean[r] - sq[r * l + c];
            }
        }
        Ok(())
    };
    let wmean = |pts: &[f64], dim: usize, out: &mut [f64]| {
        for r in 0..dim {
            let mut acc = 0.0;
            for i in 1..np {
                acc += (pts[i * dim + r] - pts[r]) * wm[i];
            }
            out[r] = pts[r] + acc;
        }
    };

    for y in series {
        if y.len() != ny {
            return Err(Error::Dimension("observation dimension mismatch".into()));
        }
        sigma(&m, &p, &mut sq, &mut work, &mut xs)?;
        for i in 0..np {
            (model.transition_fn)(&xs[i * l..(i + 1) * l], &mut fx[i * l..(i + 1) * l]);
        }
        wmean(&fx, l, &mut mp);
        for a in 0..l {
            for b in 0..l {
                let mut c = 0.0;
                for i in 0..np {
                    c += (fx[i * l + a] - mp[a]) * (fx[i * l + b] - mp[b]) * wc[i];
                }
                pp[a * l + b] = c + model.state_noise[(a, b)];
            }
        }
        for a in 0..l {
            for b in 0..a {
                let v = 0.5 * (pp[a * l + b] + pp[b * l + a]);
                pp[a * l + b] = v;
                pp[b * l + a] = v;
            }
        }
        sigma(&mp, &pp, &mut sq, &mut work, &mut xs)?;
        for i in 0..np {
            (model.obs_fn)(&xs[i * l..(i + 1) * l], &mut hy[i * ny..(i + 1) * ny]);
        }
        wmean(&hy, ny, &mut my);
        for a in 0..ny {
            for b in 0..ny {
                let mut c = 0.0;
                for i in 0..np {
                    c += (hy[i * ny + a] - my[a]) * (hy[i * ny + b] - my[b]) * wc[i];
                }
                s[a * ny + b] = c + model.obs_noise[(a, b)];
            }
            for b in 0..l {
                let mut c = 0.0;
                for i in 0..np {
                    c += (xs[i * l + b] - mp[b]) * (hy[i * ny + a] - my[a]) * wc[i];
                }
                pxy[b * ny + a] = c;
            }
        }
        for a in 0..ny {
            for b in 0..a {
                let v = 0.5 * (s[a * ny + b] + s[b * ny + a]);
                s[a * ny + b] = v;
                s[b * ny + a] = v;
            }
            innov[a] = y[a] - my[a];
        }
        // s now holds its Cholesky factor.
        chol_flat(&mut s, ny, &mut work)?;
        let logdet: f64 = 2.0 * (0..ny).map(|i| s[i * ny + i].ln()).sum::<f64>();
        forward_solve(&s, ny, &mut innov);
        let quad: f64 = innov.iter().map(|v| v * v).sum();
        loglik += -0.5 * (ny as f64 * LN_2PI + logdet + quad);
        // With z = L⁻¹ innov and U = L⁻¹ Pxyᵀ: m = mp + Uᵀ z, P = Pp − Uᵀ U.
        for b in 0..l {
            let col = &mut kt[b * ny..(b + 1) * ny];
            for a in 0..ny {
                col[a] = pxy[b * ny + a];
            }
            forward_solve(&s, ny, col);
        }
        for b in 0..l {
            let u = &kt[b * ny..(b + 1) * ny];
            m[b] = mp[b] + u.iter().zip(&innov).map(|(x, z)| x * z).sum::<f64>();
        }
        for a in 0..l {
            for b in 0..=a {
                let ua = &kt[a * ny..(a + 1) * ny];
                let ub = &kt[b * ny..(b + 1) * ny];
                let v = pp[a * l + b] - ua.iter().zip(ub).map(|(x, z)| x * z).sum::<f64>();
                p[a * l + b] = v;
                p[b * l + a] = v;
            }
        }
    }
    Ok(loglik)
}
