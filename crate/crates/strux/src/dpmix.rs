//! Random-coefficient logit with a Dirichlet-process mixture-of-normals
//! prior on the unit coefficients.
//!
//! The sampler is a blocked Gibbs sampler on a stick-breaking truncation:
//! per sweep, a random-walk Metropolis step for every unit, then the
//! component indicators, the atoms and weights, the concentration and base
//! measure hyperparameters on griddy-Gibbs grids, and the covariate
//! regression Δ.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::clustering::{kmeans, KmeansInit};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, cholesky_jitter, symmetrize};
use crate::par;
use crate::rng::{self, Rng};
use crate::stats::{self, categorical_log, expit, inv_wishart_draw, inv_wishart_logpdf, ln_choose, ln_gamma, logsumexp, logsumexp_canonical, EULER_GAMMA};

/// Choice probabilities for J inside utilities plus an outside good with
/// utility zero. Index 0 of the result is the outside good.
pub fn logit_probs(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(0.0f64, f64::max);
    let mut p = Vec::with_capacity(v.len() + 1);
    p.push((-m).exp());
    p.extend(v.iter().map(|x| (x - m).exp()));
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
enum Obs {
    /// Row-major [obs][alternative][coef] for the J inside alternatives.
    Multinomial { alts: usize, x: Vec<f64>, choice: Vec<usize> },
    Binomial { x: Vec<f64>, successes: Vec<u32>, trials: Vec<u32> },
}

/// One unit's observations and covariates. Constructors validate, so the
/// likelihood routines never see malformed data.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitData {
    id: usize,
    d: usize,
    obs: Obs,
    z: Vec<f64>,
}

impl UnitData {
    /// `designs[t][j]` holds the covariates of inside alternative j+1 at
    /// observation t; `choices[t]` is 0 for the outside good.
    pub fn multinomial(id: usize, designs: &[Vec<Vec<f64>>], choices: &[usize], z: Vec<f64>) -> Result<Self> {
        if designs.is_empty() || designs.len() != choices.len() {
            return invalid(format!("unit {id}: need at least one observation and one choice per observation"));
        }
        let alts = designs[0].len();
        let d = designs[0].first().map_or(0, |r| r.len());
        if alts == 0 || d == 0 {
            return invalid(format!("unit {id}: empty design"));
        }
        let mut x = Vec::with_capacity(designs.len() * alts * d);
        for (t, obs) in designs.iter().enumerate() {
            if obs.len() != alts || obs.iter().any(|r| r.len() != d) {
                return Err(Error::Dimension(format!("unit {id}: ragged design at observation {t}")));
            }
            for row in obs {
                if row.iter().any(|v| !v.is_finite()) {
                    return invalid(format!("unit {id}: non-finite design entry at observation {t}"));
                }
                x.extend_from_slice(row);
            }
            if choices[t] > alts {
                return invalid(format!("unit {id}: choice {} outside 0..={alts}", choices[t]));
            }
        }
        check_z(id, &z)?;
        Ok(Self { id, d, obs: Obs::Multinomial { alts, x, choice: choices.to_vec() }, z })
    }

    pub fn binomial(id: usize, x: &[Vec<f64>], successes: &[u32], trials: &[u32], z: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != successes.len() || x.len() != trials.len() {
            return invalid(format!("unit {id}: need at least one observation with matching outcomes"));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension(format!("unit {id}: ragged design")));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return invalid(format!("unit {id}: non-finite design entry"));
        }
        if successes.iter().zip(trials).any(|(s, n)| s > n || *n == 0) {
            return invalid(format!("unit {id}: successes must lie in 0..=trials with trials > 0"));
        }
        check_z(id, &z)?;
        Ok(Self { id, d, obs: Obs::Binomial { x: x.concat(), successes: successes.to_vec(), trials: trials.to_vec() }, z })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn covariates(&self) -> &[f64] {
        &self.z
    }

    pub fn n_obs(&self) -> usize {
        match &self.obs {
            Obs::Multinomial { choice, .. } => choice.len(),
            Obs::Binomial { successes, .. } => successes.len(),
        }
    }

    /// Observed choices of a multinomial unit; 0 is the outside good.
    pub fn choices(&self) -> Option<&[usize]> {
        match &self.obs {
            Obs::Multinomial { choice, .. } => Some(choice),
            Obs::Binomial { .. } => None,
        }
    }

    /// Covariates of observation `t`: one row per inside alternative for a
    /// multinomial unit, a single row for a binomial one.
    pub fn design(&self, t: usize) -> Option<Vec<&[f64]>> {
        let d = self.d;
        match &self.obs {
            Obs::Multinomial { alts, x, choice } if t < choice.len() => {
                Some((0..*alts).map(|j| &x[(t * alts + j) * d..(t * alts + j + 1) * d]).collect())
            }
            Obs::Binomial { x, successes, .. } if t < successes.len() => Some(vec![&x[t * d..(t + 1) * d]]),
            _ => None,
        }
    }

    pub fn is_binomial(&self) -> bool {
        matches!(self.obs, Obs::Binomial { .. })
    }

    /// Log likelihood and gradient, observation by observation.
    fn loglik_grad(&self, lambda: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.d;
        let mut g_local;
        let g: &mut [f64] = match grad {
            Some(g) => {
                g.iter_mut().for_each(|v| *v = 0.0);
                g
            }
            None => {
                g_local = Vec::new();
                &mut g_local
            }
        };
        let want_grad = !g.is_empty();
        let mut ll = 0.0;
        match &self.obs {
            Obs::Multinomial { alts, x, choice } => {
                let j = *alts;
                let mut v = vec![0.0; j];
                for (t, &c) in choice.iter().enumerate() {
                    let base = t * j * d;
                    for (a, slot) in v.iter_mut().enumerate() {
                        let row = &x[base + a * d..base + (a + 1) * d];
                        *slot = row.iter().zip(lambda).map(|(p, q)| p * q).sum();
                    }
                    let m = v.iter().cloned().fold(0.0f64, f64::max);
                    let lse = m + ((-m).exp() + v.iter().map(|x| (x - m).exp()).sum::<f64>()).ln();
                    ll += if c == 0 { -lse } else { v[c - 1] - lse };
                    if want_grad {
                        let p = logit_probs(&v);
                        if c > 0 {
                            let row = &x[base + (c - 1) * d..base + c * d];
                            for k in 0..d {
                                g[k] += row[k];
                            }
                        }
                        for a in 0..j {
                            let row = &x[base + a * d..base + (a + 1) * d];
                            for k in 0..d {
                                g[k] -= p[a + 1] * row[k];
                            }
                        }
                    }
                }
            }
            Obs::Binomial { x, successes, trials } => {
                for (t, (&s, &n)) in successes.iter().zip(trials).enumerate() {
                    let row = &x[t * d..(t + 1) * d];
                    let u: f64 = row.iter().zip(lambda).map(|(p, q)| p * q).sum();
                    // log p = −log(1+e^{−u}), log(1−p) = −log(1+e^{u}).
                    let lp = -softplus(-u);
                    let lq = -softplus(u);
                    ll += ln_choose(n, s) + s as f64 * lp + (n - s) as f64 * lq;
                    if want_grad {
                        let r = s as f64 - n as f64 * expit(u);
                        for k in 0..d {
                            g[k] += r * row[k];
                        }
                    }
                }
            }
        }
        ll
    }

    /// Probability of each observed outcome under `lambda`, in order.
    pub fn outcome_probs(&self, lambda: &[f64]) -> Vec<f64> {
        let d = self.d;
        match &self.obs {
            Obs::Multinomial { alts, x, choice } => choice
                .iter()
                .enumerate()
                .map(|(t, &c)| {
                    let base = t * alts * d;
                    let v: Vec<f64> = (0..*alts).map(|a| x[base + a * d..base + (a + 1) * d].iter().zip(lambda).map(|(p, q)| p * q).sum()).collect();
                    logit_probs(&v)[c]
                })
                .collect(),
            Obs::Binomial { x, successes, trials } => successes
                .iter()
                .zip(trials)
                .enumerate()
                .map(|(t, (&s, &n))| {
                    let u: f64 = x[t * d..(t + 1) * d].iter().zip(lambda).map(|(p, q)| p * q).sum();
                    (ln_choose(n, s) - s as f64 * softplus(-u) - (n - s) as f64 * softplus(u)).exp()
                })
                .collect(),
        }
    }

    /// Keep only the observations in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_obs() {
            return invalid("observation range out of bounds");
        }
        let d = self.d;
        let obs = match &self.obs {
            Obs::Multinomial { alts, x, choice } => Obs::Multinomial {
                alts: *alts,
                x: x[range.start * alts * d..range.end * alts * d].to_vec(),
                choice: choice[range.clone()].to_vec(),
            },
            Obs::Binomial { x, successes, trials } => Obs::Binomial {
                x: x[range.start * d..range.end * d].to_vec(),
                successes: successes[range.clone()].to_vec(),
                trials: trials[range].to_vec(),
            },
        };
        Ok(Self { obs, ..self.clone() })
    }
}

fn check_z(id: usize, z: &[f64]) -> Result<()> {
    if z.iter().any(|v| !v.is_finite()) {
        return invalid(format!("unit {id}: non-finite covariate"));
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_lambda(lambda: &[f64], unit: &UnitData) -> Result<()> {
    if lambda.len() != unit.d {
        return Err(Error::Dimension(format!("coefficient vector has {} entries, design {}", lambda.len(), unit.d)));
    }
    Ok(())
}

/// Sum of log outcome probabilities; binomial terms include the trial counts.
pub fn unit_loglik(lambda: &[f64], unit: &UnitData) -> Result<f64> {
    check_lambda(lambda, unit)?;
    Ok(unit.loglik_grad(lambda, None))
}

/// Log likelihood and its gradient.
pub fn unit_loglik_grad(lambda: &[f64], unit: &UnitData) -> Result<(f64, Vec<f64>)> {
    check_lambda(lambda, unit)?;
    let mut g = vec![0.0; unit.d];
    let ll = unit.loglik_grad(lambda, Some(&mut g));
    Ok((ll, g))
}

/// Pooled log likelihood and gradient over all units at a common `lambda`.
pub fn pooled_loglik_grad(lambda: &[f64], units: &[UnitData]) -> (f64, Vec<f64>) {
    let d = lambda.len();
    let parts = par::map_slice(units, |_, u| {
        let mut g = vec![0.0; d];
        let ll = u.loglik_grad(lambda, Some(&mut g));
        (ll, g)
    });
    let mut g = vec![0.0; d];
    let mut lls = Vec::with_capacity(parts.len());
    for (ll, gi) in parts {
        lls.push(ll);
        for k in 0..d {
            g[k] += gi[k];
        }
    }
    (par::sum_ordered(&lls), g)
}

/// (1−w)·l_i + w·β·pooled with β = n_i/N.
pub fn fractional_loglik(lambda: &[f64], unit: &UnitData, pooled: &dyn Fn(&[f64]) -> f64, w: f64, n_i: usize, n_total: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&w) {
        return invalid(format!("fractional weight {w} outside [0, 1)"));
    }
    let li = unit_loglik(lambda, unit)?;
    if w == 0.0 {
        return Ok(li);
    }
    let beta = n_i as f64 / n_total as f64;
    Ok((1.0 - w) * li + w * beta * pooled(lambda))
}

/// Maximize a concave-ish objective from `x0` by damped Newton steps with a
/// finite-difference Hessian of the analytic gradient. Returns the point and
/// the negative Hessian there.
fn newton_max(f: &dyn Fn(&[f64]) -> (f64, Vec<f64>), x0: &[f64], iters: usize) -> (Vec<f64>, DMatrix<f64>) {
    let d = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let neg_hess = |x: &[f64]| -> DMatrix<f64> {
        let mut h = DMatrix::zeros(d, d);
        for k in 0..d {
            let step = 1e-5 * x[k].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += step;
            xm[k] -= step;
            let gp = f(&xp).1;
            let gm = f(&xm).1;
            for r in 0..d {
                h[(r, k)] = -(gp[r] - gm[r]) / (2.0 * step);
            }
        }
        symmetrize(&h)
    };
    for _ in 0..iters {
        if g.iter().all(|v| v.abs() < 1e-8) {
            break;
        }
        let h = neg_hess(&x);
        let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
        let gv = DVector::from_column_slice(&g);
        let step = match Cholesky::new(&h + DMatrix::identity(d, d) * (1e-8 * scale)) {
            Some(c) => c.solve(&gv),
            None => gv.clone() / scale,
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let (fc, gc) = f(&cand);
            if fc.is_finite() && fc >= fx {
                moved = fc > fx;
                x = cand;
                fx = fc;
                g = gc;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let h = neg_hess(&x);
    (x, h)
}

/// Maximum likelihood of a homogeneous logit (one coefficient vector for every unit).
pub fn homogeneous_mle(units: &[UnitData]) -> Result<Vec<f64>> {
    let d = units.first().ok_or_else(|| Error::Invalid("no units".into()))?.d;
    if units.iter().any(|u| u.d != d) {
        return Err(Error::Dimension("units have different design widths".into()));
    }
    let f = |x: &[f64]| pooled_loglik_grad(x, units);
    Ok(newton_max(&f, &vec![0.0; d], 100).0)
}

/// Gaussian prior on one unit's coefficients.
#[derive(Debug, Clone)]
pub struct GaussPrior {
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussPrior {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { mean, chol: cholesky_jitter(cov)? })
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        stats::mvn_logpdf_chol(x, &self.mean, &self.chol)
    }
}

/// One random-walk Metropolis step with proposal N(0, s²Ω), where
/// `omega_root` is a lower factor of Ω. Target: unit likelihood times prior.
pub fn mh_rw_unit(unit: &UnitData, current: &[f64], current_ll: f64, prior: &GaussPrior, omega_root: &DMatrix<f64>, s: f64, rng: &mut Rng) -> (Vec<f64>, f64, bool) {
    let d = current.len();
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let step = omega_root * z * s;
    let cand: Vec<f64> = current.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
    let cand_ll = unit.loglik_grad(&cand, None);
    let lp_new = cand_ll + prior.logpdf(&DVector::from_column_slice(&cand));
    let lp_old = current_ll + prior.logpdf(&DVector::from_column_slice(current));
    let log_u: f64 = rng.random::<f64>().ln();
    if lp_new.is_finite() && log_u < lp_new - lp_old {
        (cand, cand_ll, true)
    } else {
        (current.to_vec(), current_ll, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Log π_k + log N(resid | μ_k, Σ_k) for every atom.
pub fn indicator_log_weights(resid: &DVector<f64>, atoms: &[Atom], pi: &[f64]) -> Result<Vec<f64>> {
    let chols: Vec<Cholesky<f64, Dyn>> = atoms.iter().map(|a| cholesky_jitter(&a.sigma)).collect::<Result<_>>()?;
    Ok(log_weights_with(resid, atoms, &chols, pi))
}

fn log_weights_with(resid: &DVector<f64>, atoms: &[Atom], chols: &[Cholesky<f64, Dyn>], pi: &[f64]) -> Vec<f64> {
    atoms.iter().zip(chols).zip(pi).map(|((a, c), p)| if *p > 0.0 { p.ln() + stats::mvn_logpdf_chol(resid, &a.mu, c) } else { f64::NEG_INFINITY }).collect()
}

/// Draw component indicators for every unit. `resids[i]` is Λ_i − Δz_i.
pub fn gibbs_indicators(resids: &[DVector<f64>], atoms: &[Atom], pi: &[f64], seed: u64, sweep: u64) -> Result<Vec<usize>> {
    if atoms.is_empty() || atoms.len() != pi.len() {
        return invalid("need one weight per atom and at least one atom");
    }
    let chols: Vec<Cholesky<f64, Dyn>> = atoms.iter().map(|a| cholesky_jitter(&a.sigma)).collect::<Result<_>>()?;
    let out = par::map_slice(resids, |i, r| {
        let lw = log_weights_with(r, atoms, &chols, pi);
        let mut rng = rng::stream(seed, &[0x1d, sweep, i as u64]);
        categorical_log(&mut rng, &lw)
    });
    Ok(out)
}

/// Base-measure hyperparameters: μ | Σ ~ N(0, Σ/a), Σ ~ IW(d−1+ν, (d−1+ν)·ϑ·I).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseHypers {
    pub a: f64,
    pub nu: f64,
    pub v: f64,
}

impl BaseHypers {
    pub fn iw_df(&self, d: usize) -> f64 {
        d as f64 - 1.0 + self.nu
    }

    pub fn iw_scale(&self, d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d) * (self.iw_df(d) * self.v)
    }
}

/// Conjugate draw of one atom given the residuals assigned to it; an empty
/// group draws from the base measure.
pub fn draw_atom(resids: &[&DVector<f64>], d: usize, h: &BaseHypers, rng: &mut Rng) -> Result<Atom> {
    let df = h.iw_df(d);
    if df <= d as f64 - 1.0 {
        return invalid(format!("inverse-Wishart degrees of freedom {df} too small for dimension {d}"));
    }
    let n = resids.len() as f64;
    let mut bar = DVector::zeros(d);
    for r in resids {
        bar += *r;
    }
    if n > 0.0 {
        bar /= n;
    }
    // μ̃ = n·ᾱ/(n+a) with prior mean 0.
    let tilde = &bar * (n / (n + h.a));
    let mut scale = h.iw_scale(d);
    for r in resids {
        let e = *r - &tilde;
        scale.ger(1.0, &e, &e, 1.0);
    }
    scale.ger(h.a, &tilde, &tilde, 1.0);
    let sigma = inv_wishart_draw(rng, df + n, &symmetrize(&scale))?;
    let mu = stats::mvn_draw(rng, &tilde, &(&sigma / (n + h.a)))?;
    Ok(Atom { mu, sigma })
}

/// Prior stick-breaking weights; the last bucket takes the remainder, so
/// the weights sum to one.
pub fn stick_breaking(alpha: f64, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let counts = vec![0usize; k];
    stick_breaking_posterior(&counts, alpha, rng)
}

/// Stick-breaking weights given component counts:
/// β_k ~ Beta(1 + n_k, α + Σ_{l>k} n_l).
pub fn stick_breaking_posterior(counts: &[usize], alpha: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let k = counts.len();
    if k == 0 {
        return invalid("truncation must be at least 1");
    }
    if !(alpha > 0.0) {
        return invalid("concentration must be positive");
    }
    let mut tail: usize = counts.iter().sum();
    let mut pi = Vec::with_capacity(k);
    let mut rest = 1.0;
    let mut used = 0.0;
    for &c in &counts[..k - 1] {
        tail -= c;
        let b = Beta::new(1.0 + c as f64, alpha + tail as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        let beta: f64 = b.sample(rng);
        let w = beta * rest;
        pi.push(w);
        used += w;
        rest *= 1.0 - beta;
    }
    pi.push((1.0 - used).max(0.0));
    Ok(pi)
}

/// Expected stick mass beyond the truncation, (α/(1+α))^K.
pub fn truncation_tail(alpha: f64, k: usize) -> f64 {
    (alpha / (1.0 + alpha)).powi(k as i32)
}

/// log |S(n, k)| for unsigned Stirling numbers of the first kind, by the
/// recurrence S(n+1, k) = n·S(n, k) + S(n, k−1) in log space.
pub fn log_stirling_exact(n: usize, k: usize) -> f64 {
    if k > n || (k == 0 && n > 0) {
        return f64::NEG_INFINITY;
    }
    let mut row = vec![f64::NEG_INFINITY; k + 1];
    row[0] = 0.0;
    for m in 0..n {
        for j in (0..=k.min(m + 1)).rev() {
            let stay = if j <= m { (m as f64).ln() + row[j] } else { f64::NEG_INFINITY };
            let up = if j > 0 { row[j - 1] } else { f64::NEG_INFINITY };
            row[j] = logsumexp(&[stay, up]);
        }
    }
    row[k]
}

/// The closed-form approximation Γ(n)/Γ(k)·(γ + ln n)^{k−1}, in logs.
pub fn log_stirling_approx(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64) - ln_gamma(k as f64) + (k as f64 - 1.0) * (EULER_GAMMA + (n as f64).ln()).ln()
}

/// log Pr(I* = k | α, n) under the Pólya urn, with either Stirling term.
pub fn istar_log_prob(k: usize, n: usize, alpha: f64, exact: bool) -> f64 {
    let s = if exact { log_stirling_exact(n, k) } else { log_stirling_approx(n, k) };
    s + k as f64 * alpha.ln() + ln_gamma(alpha) - ln_gamma(n as f64 + alpha)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperBounds {
    pub alpha: (f64, f64),
    pub a: (f64, f64),
    pub nu: (f64, f64),
    pub v: (f64, f64),
}

impl HyperBounds {
    /// Diffuse bounds for the choice model.
    pub fn choice() -> Self {
        Self { alpha: (1e-5, 50.0), a: (1e-5, 50.0), nu: (1e-5, 80.0), v: (1e-5, 600.0) }
    }

    /// Tighter preset for the contribution model.
    pub fn gamification() -> Self {
        Self { alpha: (0.01, 2.0), a: (0.01, 2.0), nu: (0.1, 4.0), v: (0.1, 3.0) }
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("alpha", self.alpha), ("a", self.a), ("nu", self.nu), ("v", self.v)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return invalid(format!("bounds for {name} must satisfy 0 < lo <= hi"));
            }
        }
        Ok(())
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if lo == hi || n < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| if i + 1 == n { hi } else { (a + (b - a) * i as f64 / (n - 1) as f64).exp() }).collect()
}

/// Draw from a density on a log-spaced grid; each point carries its cell
/// width, proportional to x. Widens once when every weight is −∞.
fn griddy(rng: &mut Rng, lo: f64, hi: f64, n: usize, logw: &dyn Fn(f64) -> f64) -> Result<f64> {
    for widen in [1.0, 10.0] {
        let grid = log_grid(lo / widen, hi * widen, n);
        let lw: Vec<f64> = grid.iter().map(|&x| logw(x) + x.ln()).collect();
        if lw.iter().any(|v| v.is_finite()) {
            return Ok(grid[categorical_log(rng, &lw)]);
        }
    }
    Err(Error::Numerical("griddy Gibbs weights underflow on the widened grid".into()))
}

/// Concentration and base-measure hyperparameters given the occupied atoms.
/// α uses the unique-count likelihood with the power prior
/// (1 − (α − lo)/(hi − lo))^φ; a, ν and ϑ use their conditional given the
/// occupied atoms, with ν and ϑ updated one after the other.
pub fn draw_dp_hypers(occupied: &[&Atom], n_units: usize, current: &BaseHypers, bounds: &HyperBounds, power: f64, grid: usize, rng: &mut Rng) -> Result<(f64, BaseHypers)> {
    bounds.validate()?;
    let istar = occupied.len();
    if istar == 0 {
        return invalid("at least one occupied atom required");
    }
    let d = occupied[0].mu.len();
    let (alo, ahi) = bounds.alpha;
    let alpha = griddy(rng, alo, ahi, grid, &|x| {
        let prior = if ahi > alo && power != 0.0 { power * (1.0 - (x - alo) / (ahi - alo)).max(0.0).ln() } else { 0.0 };
        istar as f64 * x.ln() + ln_gamma(x) - ln_gamma(n_units as f64 + x) + prior
    })?;
    let chols: Vec<Cholesky<f64, Dyn>> = occupied.iter().map(|a| cholesky_jitter(&a.sigma)).collect::<Result<_>>()?;
    let quad: f64 = occupied.iter().zip(&chols).map(|(a, c)| c.l().solve_lower_triangular(&a.mu).map_or(0.0, |z| z.norm_squared())).sum();
    let a = griddy(rng, bounds.a.0, bounds.a.1, grid, &|x| 0.5 * (d * istar) as f64 * x.ln() - 0.5 * x * quad)?;
    let iw_ll = |nu: f64, v: f64| -> f64 {
        let h = BaseHypers { a, nu, v };
        let scale = h.iw_scale(d);
        occupied.iter().map(|at| inv_wishart_logpdf(&at.sigma, h.iw_df(d), &scale).unwrap_or(f64::NEG_INFINITY)).sum()
    };
    let v_now = current.v.clamp(bounds.v.0, bounds.v.1);
    let nu = griddy(rng, bounds.nu.0, bounds.nu.1, grid, &|x| iw_ll(x, v_now))?;
    let v = griddy(rng, bounds.v.0, bounds.v.1, grid, &|x| iw_ll(nu, x))?;
    Ok((alpha, BaseHypers { a, nu, v }))
}

/// Draw of Δ (d×q) from its conditional given Λ, indicators and atoms:
/// Λ_i − μ_{k_i} = Δz_i + e_i, e_i ~ N(0, Σ_{k_i}), with prior vec(Δ) ~
/// N(0, prior_var·I). Returns the draw and whether a ridge was needed.
pub fn draw_delta(lambdas: &[DVector<f64>], z: &[Vec<f64>], indicators: &[usize], atoms: &[Atom], prior_var: f64, rng: &mut Rng) -> Result<(DMatrix<f64>, bool)> {
    let d = lambdas.first().map_or(0, |l| l.len());
    let q = z.first().map_or(0, |v| v.len());
    if q == 0 {
        return Ok((DMatrix::zeros(d, 0), false));
    }
    let dq = d * q;
    let mut prec = DMatrix::identity(dq, dq) / prior_var;
    let mut rhs = DVector::zeros(dq);
    let sinv: Vec<DMatrix<f64>> = atoms.iter().map(|a| linalg::spd_inverse(&a.sigma)).collect::<Result<_>>()?;
    for (i, l) in lambdas.iter().enumerate() {
        let k = indicators[i];
        let si = &sinv[k];
        let r = si * (l - &atoms[k].mu);
        for a in 0..q {
            let za = z[i][a];
            for c in 0..d {
                rhs[a * d + c] += za * r[c];
            }
            for b in 0..q {
                let zz = za * z[i][b];
                if zz != 0.0 {
                    let mut blk = prec.view_mut((a * d, b * d), (d, d));
                    blk += si * zz;
                }
            }
        }
    }
    let prec = symmetrize(&prec);
    let (chol, ridged) = match Cholesky::new(prec.clone()) {
        Some(c) => (c, false),
        None => (Cholesky::new(&prec + DMatrix::identity(dq, dq) * 1e-6).ok_or_else(|| Error::Numerical("Δ precision singular after ridge".into()))?, true),
    };
    let mean = chol.solve(&rhs);
    // x = mean + L⁻ᵀ ε has covariance (L Lᵀ)⁻¹.
    let eps = stats::std_normal_vec(rng, dq);
    let dev = chol.l().transpose().solve_upper_triangular(&eps).ok_or_else(|| Error::Numerical("Δ draw".into()))?;
    let v = mean + dev;
    Ok((DMatrix::from_column_slice(d, q, v.as_slice()), ridged))
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    pub k_trunc: usize,
    pub bounds: HyperBounds,
    /// Power φ of the concentration prior.
    pub power: f64,
    pub grid: usize,
    /// Fractional-likelihood weight.
    pub w: f64,
    /// MH scale; `None` gives 2.93/√d.
    pub scale: Option<f64>,
    /// Burn-in adaptation target for the acceptance rate.
    pub target_accept: f64,
    pub delta_prior_var: f64,
    /// Number of k-means groups of the fractional modes used as the initial
    /// partition; 1 starts every unit in one atom.
    pub init_clusters: usize,
    pub seed: u64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            draws: 1000,
            thin: 1,
            k_trunc: 50,
            bounds: HyperBounds::choice(),
            power: 0.8,
            grid: 64,
            w: 0.1,
            scale: None,
            target_accept: 0.23,
            delta_prior_var: 100.0,
            init_clusters: 5,
            seed: 0,
        }
    }
}

/// Full sampler state.
#[derive(Debug, Clone, PartialEq)]
pub struct DpState {
    pub lambda: Vec<DVector<f64>>,
    pub indicators: Vec<usize>,
    pub atoms: Vec<Atom>,
    pub pi: Vec<f64>,
    pub alpha: f64,
    pub hypers: BaseHypers,
    pub delta: DMatrix<f64>,
}

impl DpState {
    pub fn occupied(&self) -> usize {
        let mut seen = vec![false; self.atoms.len()];
        for &k in &self.indicators {
            seen[k] = true;
        }
        seen.iter().filter(|s| **s).count()
    }

    /// Relabel atoms: new label `perm[k]` for old label `k`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let k = self.atoms.len();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return invalid("not a permutation of the atom labels");
        }
        let mut atoms = self.atoms.clone();
        let mut pi = self.pi.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old].clone();
            pi[new] = self.pi[old];
        }
        Ok(Self { indicators: self.indicators.iter().map(|&i| perm[i]).collect(), atoms, pi, ..self.clone() })
    }

    /// Log density of a coefficient vector for a unit with covariates `z`
    /// under the current mixture; independent of atom labels.
    pub fn mixture_logpdf(&self, lambda: &DVector<f64>, z: &[f64]) -> Result<f64> {
        let resid = lambda - &self.delta * DVector::from_column_slice(z);
        let lw = indicator_log_weights(&resid, &self.atoms, &self.pi)?;
        Ok(logsumexp_canonical(&lw))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerChains {
    /// Kept draws of every unit's coefficients: one n×d matrix per draw.
    pub lambda: Vec<DMatrix<f64>>,
    pub alpha: Vec<f64>,
    pub hypers: Vec<BaseHypers>,
    pub delta: Vec<DMatrix<f64>>,
    /// Occupied components per sweep, burn-in included.
    pub istar: Vec<usize>,
    /// Per-unit acceptance rate over the kept sweeps.
    pub acceptance: Vec<f64>,
    /// Per-unit MH scale after adaptation.
    pub scales: Vec<f64>,
    pub truncation_tail: f64,
    pub delta_ridged: bool,
    /// Units whose Hessian could not be repaired; their proposal uses Σ_k.
    pub hessian_fallbacks: usize,
    pub last: DpState,
}

impl SamplerChains {
    /// Posterior mean coefficients, n×d.
    pub fn posterior_means(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.lambda[0].nrows(), self.lambda[0].ncols());
        for l in &self.lambda {
            m += l;
        }
        m / self.lambda.len() as f64
    }

    /// Σ_i Σ_t log of the posterior-mean probability of each held-out
    /// outcome; `heldout[i]` belongs to unit i.
    pub fn heldout_loglik(&self, heldout: &[UnitData]) -> Result<f64> {
        let n = self.lambda[0].nrows();
        if heldout.len() != n {
            return Err(Error::Dimension(format!("{} held-out units for {} fitted", heldout.len(), n)));
        }
        let parts = par::map_slice(heldout, |i, u| {
            let mut acc = vec![0.0; u.n_obs()];
            for l in &self.lambda {
                let row: Vec<f64> = l.row(i).iter().copied().collect();
                for (a, p) in acc.iter_mut().zip(u.outcome_probs(&row)) {
                    *a += p;
                }
            }
            acc.iter().map(|a| (a / self.lambda.len() as f64).ln()).sum::<f64>()
        });
        Ok(par::sum_ordered(&parts))
    }
}

/// Proposal precision pieces for one unit: the fractional-likelihood mode
/// and the negative Hessian there (None when not repairable).
fn unit_curvature(unit: &UnitData, units: &[UnitData], w: f64, n_total: usize, start: &[f64]) -> (Vec<f64>, Option<DMatrix<f64>>) {
    let beta = unit.n_obs() as f64 / n_total as f64;
    let f = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut gi = vec![0.0; x.len()];
        let li = unit.loglik_grad(x, Some(&mut gi));
        if w == 0.0 {
            return (li, gi);
        }
        let (lp, gp) = pooled_loglik_grad(x, units);
        let g = gi.iter().zip(&gp).map(|(a, b)| (1.0 - w) * a + w * beta * b).collect();
        ((1.0 - w) * li + w * beta * lp, g)
    };
    let (mode, h) = newton_max(&f, start, 30);
    let d = h.nrows();
    if h.iter().any(|v| !v.is_finite()) {
        return (mode, None);
    }
    let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let min_eig = linalg::min_eigenvalue(&h);
    let h = if min_eig < 1e-8 * scale { &h + DMatrix::identity(d, d) * (1e-8 * scale - min_eig) } else { h };
    match Cholesky::new(h.clone()) {
        Some(_) => (mode, Some(h)),
        None => (mode, None),
    }
}

/// Run the blocked Gibbs sampler.
pub fn run_sampler(units: &[UnitData], cfg: &DpConfig) -> Result<SamplerChains> {
    let n = units.len();
    if n == 0 {
        return invalid("empty panel");
    }
    let d = units[0].d;
    let q = units[0].z.len();
    if units.iter().any(|u| u.d != d || u.z.len() != q) {
        return Err(Error::Dimension("units differ in design width or covariate count".into()));
    }
    if cfg.k_trunc == 0 || cfg.draws == 0 || cfg.thin == 0 || cfg.grid == 0 || cfg.init_clusters == 0 {
        return invalid("truncation, draws, thinning, grid size and initial clusters must be positive");
    }
    if !(0.0..1.0).contains(&cfg.w) {
        return invalid("fractional weight must lie in [0, 1)");
    }
    cfg.bounds.validate()?;
    let n_total: usize = units.iter().map(|u| u.n_obs()).sum();
    let pooled = homogeneous_mle(units)?;
    let curv: Vec<(Vec<f64>, Option<DMatrix<f64>>)> = par::map_slice(units, |_, u| unit_curvature(u, units, cfg.w, n_total, &pooled));
    let fallbacks = curv.iter().filter(|c| c.1.is_none()).count();

    let mut r = rng::stream(cfg.seed, &[0xd9]);
    let hyper0 = BaseHypers { a: 0.1f64.clamp(cfg.bounds.a.0, cfg.bounds.a.1), nu: 4.0f64.clamp(cfg.bounds.nu.0, cfg.bounds.nu.1), v: 1.0f64.clamp(cfg.bounds.v.0, cfg.bounds.v.1) };
    let mut state = DpState {
        lambda: curv.iter().map(|c| DVector::from_column_slice(&c.0)).collect(),
        indicators: vec![0; n],
        atoms: Vec::new(),
        pi: Vec::new(),
        alpha: 1.0f64.clamp(cfg.bounds.alpha.0, cfg.bounds.alpha.1),
        hypers: hyper0,
        delta: DMatrix::zeros(d, q),
    };
    // Splitting a merged atom is slow for blocked Gibbs, so start from a
    // few k-means groups and let the sampler merge them.
    let k0 = cfg.init_clusters.min(n).min(cfg.k_trunc);
    if k0 > 1 {
        let modes: Vec<Vec<f64>> = curv.iter().map(|c| c.0.clone()).collect();
        state.indicators = kmeans(&modes, k0, KmeansInit::PlusPlus, 100, rng::mix(cfg.seed, &[0x6b]))?.partition.assignment;
    }
    let mut counts = vec![0usize; cfg.k_trunc];
    for &k in &state.indicators {
        counts[k] += 1;
    }
    for k in 0..cfg.k_trunc {
        let group: Vec<&DVector<f64>> = state.lambda.iter().zip(&state.indicators).filter(|(_, z)| **z == k).map(|(l, _)| l).collect();
        state.atoms.push(draw_atom(&group, d, &state.hypers, &mut r)?);
    }
    state.pi = stick_breaking_posterior(&counts, state.alpha, &mut r)?;

    let s0 = cfg.scale.unwrap_or(2.93 / (d as f64).sqrt());
    let mut scales = vec![s0; n];
    let mut lls: Vec<f64> = units.iter().zip(&state.lambda).map(|(u, l)| u.loglik_grad(l.as_slice(), None)).collect();
    let mut accepted = vec![0usize; n];
    let mut window = vec![0usize; n];
    const ADAPT_EVERY: usize = 50;

    let total = cfg.burn_in + cfg.draws * cfg.thin;
    let mut chains = SamplerChains {
        lambda: Vec::with_capacity(cfg.draws),
        alpha: Vec::with_capacity(cfg.draws),
        hypers: Vec::with_capacity(cfg.draws),
        delta: Vec::with_capacity(cfg.draws),
        istar: Vec::with_capacity(total),
        acceptance: vec![0.0; n],
        scales: Vec::new(),
        truncation_tail: 0.0,
        delta_ridged: false,
        hessian_fallbacks: fallbacks,
        last: state.clone(),
    };
    for sweep in 0..total {
        let sw = sweep as u64;
        // Unit MH steps, independent given the mixture.
        let zs: Vec<DVector<f64>> = units.iter().map(|u| DVector::from_column_slice(&u.z)).collect();
        let sig_inv: Vec<DMatrix<f64>> = state.atoms.iter().map(|a| linalg::spd_inverse(&a.sigma)).collect::<Result<_>>()?;
        let moves = par::map_range(n, |i| -> Result<(Vec<f64>, f64, bool)> {
            let k = state.indicators[i];
            let atom = &state.atoms[k];
            let mean = &atom.mu + &state.delta * &zs[i];
            let prior = GaussPrior::new(mean, &atom.sigma)?;
            let root = match &curv[i].1 {
                Some(h) => {
                    let p = symmetrize(&(h + &sig_inv[k]));
                    let omega = linalg::spd_inverse(&p)?;
                    cholesky_jitter(&omega)?.l()
                }
                None => cholesky_jitter(&atom.sigma)?.l(),
            };
            let mut rr = rng::stream(cfg.seed, &[0x3b, sw, i as u64]);
            Ok(mh_rw_unit(&units[i], state.lambda[i].as_slice(), lls[i], &prior, &root, scales[i], &mut rr))
        });
        for (i, m) in moves.into_iter().enumerate() {
            let (l, ll, acc) = m?;
            state.lambda[i] = DVector::from_vec(l);
            lls[i] = ll;
            if acc {
                window[i] += 1;
                if sweep >= cfg.burn_in {
                    accepted[i] += 1;
                }
            }
        }
        if sweep < cfg.burn_in && (sweep + 1) % ADAPT_EVERY == 0 {
            for i in 0..n {
                let rate = window[i] as f64 / ADAPT_EVERY as f64;
                scales[i] = (scales[i] * (2.0 * (rate - cfg.target_accept)).exp()).clamp(1e-3 * s0, 1e3 * s0);
                window[i] = 0;
            }
        }

        let resids: Vec<DVector<f64>> = state.lambda.iter().zip(&zs).map(|(l, z)| l - &state.delta * z).collect();
        state.indicators = gibbs_indicators(&resids, &state.atoms, &state.pi, cfg.seed, sw)?;

        let mut groups: Vec<Vec<&DVector<f64>>> = vec![Vec::new(); cfg.k_trunc];
        for (i, &k) in state.indicators.iter().enumerate() {
            groups[k].push(&resids[i]);
        }
        let hy = state.hypers;
        let atoms = par::map_range(cfg.k_trunc, |k| {
            let mut rr = rng::stream(cfg.seed, &[0xa7, sw, k as u64]);
            draw_atom(&groups[k], d, &hy, &mut rr)
        });
        state.atoms = atoms.into_iter().collect::<Result<_>>()?;
        let counts: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        let mut rh = rng::stream(cfg.seed, &[0x4e, sw]);
        let occ: Vec<&Atom> = state.atoms.iter().zip(&counts).filter(|(_, c)| **c > 0).map(|(a, _)| a).collect();
        let (alpha, hypers) = draw_dp_hypers(&occ, n, &state.hypers, &cfg.bounds, cfg.power, cfg.grid, &mut rh)?;
        state.alpha = alpha;
        state.hypers = hypers;
        state.pi = stick_breaking_posterior(&counts, state.alpha, &mut rh)?;

        let zv: Vec<Vec<f64>> = units.iter().map(|u| u.z.clone()).collect();
        let (delta, ridged) = draw_delta(&state.lambda, &zv, &state.indicators, &state.atoms, cfg.delta_prior_var, &mut rh)?;
        state.delta = delta;
        chains.delta_ridged |= ridged;
        chains.istar.push(counts.iter().filter(|c| **c > 0).count());

        if sweep >= cfg.burn_in && (sweep - cfg.burn_in + 1) % cfg.thin == 0 {
            chains.lambda.push(DMatrix::from_fn(n, d, |i, j| state.lambda[i][j]));
            chains.alpha.push(state.alpha);
            chains.hypers.push(state.hypers);
            chains.delta.push(state.delta.clone());
        }
    }
    let kept = (cfg.draws * cfg.thin) as f64;
    chains.acceptance = accepted.iter().map(|a| *a as f64 / kept).collect();
    chains.scales = scales;
    chains.truncation_tail = truncation_tail(state.alpha, cfg.k_trunc);
    chains.last = state;
    Ok(chains)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Significance {
    Positive,
    Negative,
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceSummary {
    /// `per_unit[i][j]`: verdict for coefficient j of unit i.
    pub per_unit: Vec<Vec<Significance>>,
    /// Per coefficient: (positive, negative, null) unit counts.
    pub counts: Vec<(usize, usize, usize)>,
}

/// Central credible interval of each unit coefficient; significant when the
/// interval excludes zero.
pub fn significance_summary(chains: &SamplerChains, level: f64) -> Result<SignificanceSummary> {
    if chains.lambda.len() < 100 {
        return invalid(format!("need at least 100 kept draws, have {}", chains.lambda.len()));
    }
    if !(0.0 < level && level < 1.0) {
        return invalid("level must lie in (0, 1)");
    }
    let (n, d) = chains.lambda[0].shape();
    let lo_q = (1.0 - level) / 2.0;
    let per_unit: Vec<Vec<Significance>> = (0..n)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let xs: Vec<f64> = chains.lambda.iter().map(|l| l[(i, j)]).collect();
                    let lo = stats::quantile(&xs, lo_q);
                    let hi = stats::quantile(&xs, 1.0 - lo_q);
                    if lo > 0.0 {
                        Significance::Positive
                    } else if hi < 0.0 {
                        Significance::Negative
                    } else {
                        Significance::Null
                    }
                })
                .collect()
        })
        .collect();
    let counts = (0..d)
        .map(|j| {
            let mut c = (0, 0, 0);
            for row in &per_unit {
                match row[j] {
                    Significance::Positive => c.0 += 1,
                    Significance::Negative => c.1 += 1,
                    Significance::Null => c.2 += 1,
                }
            }
            c
        })
        .collect();
    Ok(SignificanceSummary { per_unit, counts })
}
