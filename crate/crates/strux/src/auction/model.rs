//! Regret utility, maximum-bid beliefs and the first-order-condition
//! valuation inversion.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::optim::{bisect_root, numeric_argmax_1d};
use crate::quad;
use crate::rng;
use crate::stats::{gauss_hermite_64, norm_logcdf, norm_logpdf};

/// Below this log density the FOC inversion is refused.
const LN_DENSITY_FLOOR: f64 = -708.0;

/// Distribution of the highest competing bid.
pub trait MaxBidDistribution {
    fn cdf(&self, x: f64) -> f64;
    fn pdf(&self, x: f64) -> f64;
    fn ln_cdf(&self, x: f64) -> f64 {
        self.cdf(x).ln()
    }
    fn ln_pdf(&self, x: f64) -> f64 {
        self.pdf(x).ln()
    }
    /// Interval outside of which the density is negligible.
    fn support(&self) -> (f64, f64);

    /// G/g, computed in log space so it stays finite in the tails.
    fn ratio(&self, x: f64) -> Result<f64> {
        let lg = self.ln_pdf(x);
        if !(lg > LN_DENSITY_FLOOR) {
            return Err(Error::DegenerateDensity(x));
        }
        Ok((self.ln_cdf(x) - lg).exp())
    }
}

/// Gaussian latent-bid belief plus the effective number of bidders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxBidBelief {
    pub mean: f64,
    pub var: f64,
    pub n: usize,
}

impl MaxBidBelief {
    /// Rounds the latent bidder count up and floors it at two.
    pub fn from_count(mean: f64, var: f64, kappa: f64) -> Self {
        let n = if kappa.is_finite() { kappa.ceil().max(2.0).min(1e6) as usize } else { 2 };
        Self { mean, var, n }
    }
}

/// G = Φ((x − m)/s)^(n−1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMaxBid {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MaxBidDistribution for NormalMaxBid {
    fn cdf(&self, x: f64) -> f64 {
        self.ln_cdf(x).exp()
    }
    fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }
    fn ln_cdf(&self, x: f64) -> f64 {
        (self.n - 1) as f64 * norm_logcdf((x - self.mean) / self.sd)
    }
    fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        let k = (self.n - 1) as f64;
        k.ln() + (k - 1.0) * norm_logcdf(z) + norm_logpdf(z) - self.sd.ln()
    }
    fn support(&self) -> (f64, f64) {
        (self.mean - 12.0 * self.sd, self.mean + 12.0 * self.sd)
    }
}

/// Maximum of n − 1 uniform draws on [lo, hi]; closed forms for tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformMaxBid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl MaxBidDistribution for UniformMaxBid {
    fn cdf(&self, x: f64) -> f64 {
        let u = ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        u.powi(self.n as i32 - 1)
    }
    fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let w = self.hi - self.lo;
        let u = (x - self.lo) / w;
        (self.n - 1) as f64 * u.powi(self.n as i32 - 2) / w
    }
    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

pub fn max_bid_dist(belief: &MaxBidBelief) -> Result<NormalMaxBid> {
    if belief.n < 2 {
        return invalid(format!("bidder count {} below 2", belief.n));
    }
    if !(belief.var > 0.0) || !belief.var.is_finite() || !belief.mean.is_finite() {
        return invalid(format!("invalid latent-bid belief ({}, {})", belief.mean, belief.var));
    }
    Ok(NormalMaxBid { mean: belief.mean, sd: belief.var.sqrt(), n: belief.n })
}

/// What the winner pays in the utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityVariant {
    OwnBid,
    /// Pays λ·b + (1 − λ)·board_max.
    LambdaBlend { lambda: f64, board_max: f64 },
}

impl UtilityVariant {
    fn payment(&self, b: f64) -> Result<(f64, f64)> {
        match *self {
            UtilityVariant::OwnBid => Ok((b, 1.0)),
            UtilityVariant::LambdaBlend { lambda, board_max } => {
                if !(0.0..=1.0).contains(&lambda) || !board_max.is_finite() {
                    return invalid(format!("blend weight {lambda} outside [0,1]"));
                }
                Ok((lambda * b + (1.0 - lambda) * board_max, lambda))
            }
        }
    }
}

fn quad_tol(b: f64, v: f64) -> f64 {
    1e-8 * (1.0 + b.abs().max(v.abs()))
}

/// Expected profit minus anticipated winner and loser regret:
/// u = (v − p)G(b) − α∫_{z≤b}(p − z)dG − β∫_{b≤z≤v}(v − z)dG, with p the
/// payment (p = b for the own-bid variant).
pub fn bidder_utility(b: f64, v: f64, dist: &dyn MaxBidDistribution, alpha: f64, beta: f64, variant: UtilityVariant) -> Result<f64> {
    if !b.is_finite() || !v.is_finite() {
        return invalid("bid and valuation must be finite");
    }
    let (p, _) = variant.payment(b)?;
    let (lo, _) = dist.support();
    let tol = quad_tol(b, v);
    let g_b = dist.cdf(b);
    // ∫_{z≤b}(p − z)dG = (p − b)G(b) + ∫_{z≤b} G(z)dz.
    let winner = if alpha != 0.0 && b > lo {
        (p - b) * g_b + quad::integrate(|z| dist.cdf(z), lo, b, tol)?
    } else if alpha != 0.0 {
        (p - b) * g_b
    } else {
        0.0
    };
    let loser = if beta != 0.0 && v > b {
        quad::integrate(|z| (v - z) * dist.pdf(z), b, v, tol)?
    } else {
        0.0
    };
    Ok((v - p) * g_b - alpha * winner - beta * loser)
}

/// Same integrals written against the density, kept for cross-checks.
pub fn regret_integrals(b: f64, v: f64, dist: &dyn MaxBidDistribution) -> Result<(f64, f64)> {
    let (lo, _) = dist.support();
    let tol = quad_tol(b, v);
    let w = if b > lo { quad::integrate(|z| (b - z) * dist.pdf(z), lo, b, tol)? } else { 0.0 };
    let l = if v > b { quad::integrate(|z| (v - z) * dist.pdf(z), b, v, tol)? } else { 0.0 };
    Ok((w, l))
}

fn check_beta(beta: f64) -> Result<()> {
    if (1.0 + beta).abs() < 1e-8 {
        return Err(Error::LoserRegretSingularity(1.0 + beta));
    }
    Ok(())
}

/// Valuation implied by the first-order condition at bid `b`:
/// v = b + G(b)(1 + α) / (g(b)(1 + β)).
pub fn foc_valuation(b: f64, dist: &dyn MaxBidDistribution, alpha: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(b + dist.ratio(b)? * (1.0 + alpha) / (1.0 + beta))
}

/// First-order condition of the blend variant solved for v.
pub fn foc_valuation_variant(b: f64, dist: &dyn MaxBidDistribution, alpha: f64, beta: f64, variant: UtilityVariant) -> Result<f64> {
    check_beta(beta)?;
    let (p, lambda) = variant.payment(b)?;
    let r = dist.ratio(b)?;
    Ok((lambda * (1.0 + alpha) * r + p * (1.0 + alpha) + (beta - alpha) * b) / (1.0 + beta))
}

/// The valuation formula exactly as printed, redundant terms included.
pub fn foc_valuation_literal(b: f64, dist: &dyn MaxBidDistribution, alpha: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let gb = dist.cdf(b);
    let gd = dist.pdf(b);
    if !(gd > 0.0) {
        return Err(Error::DegenerateDensity(b));
    }
    let num = gb + b * gd + alpha * gb - alpha * b * gd + (alpha + beta) * b * gd;
    Ok(num / (gd + beta * gd))
}

/// Bid chosen at valuation `v`. When c = (1 + α)/(1 + β) is positive the
/// stationary point b + c·G/g = v on [lo, v] is used; this is the point the
/// estimator inverts and it is the argmax whenever 1 + α ≥ 0 and 1 + β > 0.
/// Without such a root the utility is maximized numerically on [lo, v].
pub fn optimal_bid(v: f64, dist: &dyn MaxBidDistribution, alpha: f64, beta: f64, lo: f64) -> Result<f64> {
    check_beta(beta)?;
    if !v.is_finite() || !lo.is_finite() {
        return invalid("valuation and lower bound must be finite");
    }
    if v <= lo {
        return Ok(lo);
    }
    if let Some(b) = foc_bid(v, dist, alpha, beta, lo)? {
        return Ok(b);
    }
    let f = |b: f64| bidder_utility(b, v, dist, alpha, beta, UtilityVariant::OwnBid).unwrap_or(f64::NEG_INFINITY);
    numeric_argmax_1d(f, lo, v, 1e-10 * (1.0 + v.abs()))
}

/// Root of b + c·G/g(b) = v on [lo, v] when c = (1 + α)/(1 + β) > 0.
pub fn foc_bid(v: f64, dist: &dyn MaxBidDistribution, alpha: f64, beta: f64, lo: f64) -> Result<Option<f64>> {
    check_beta(beta)?;
    let c = (1.0 + alpha) / (1.0 + beta);
    if !(c > 0.0) || !(v > lo) {
        return Ok(None);
    }
    let h = |b: f64| match dist.ratio(b) {
        Ok(r) => b + c * r - v,
        Err(_) => f64::NAN,
    };
    Ok(bisect_root(h, lo, v, 1e-12 * (1.0 + v.abs())))
}

/// How the expectation over the latent bid is taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expectation {
    GaussHermite,
    MonteCarlo { draws: usize, seed: u64 },
}

/// E[θ] and E[G/g(θ)] for θ ~ N(mean, var). The valuation is linear in
/// c = (1 + α)/(1 + β), so these two numbers give v for every (α, β).
pub fn valuation_moments(mean: f64, var: f64, dist: &dyn MaxBidDistribution, rule: Expectation) -> Result<(f64, f64)> {
    if !(var >= 0.0) || !mean.is_finite() {
        return invalid(format!("invalid bid belief ({mean}, {var})"));
    }
    let sd = var.sqrt();
    match rule {
        Expectation::GaussHermite => {
            if sd == 0.0 {
                return Ok((mean, dist.ratio(mean)?));
            }
            let (x, w) = gauss_hermite_64();
            let mut r = 0.0;
            for (xi, wi) in x.iter().zip(w) {
                r += wi * dist.ratio(mean + sd * xi)?;
            }
            Ok((mean, r))
        }
        Expectation::MonteCarlo { draws, seed } => {
            if draws == 0 {
                return invalid("Monte Carlo expectation needs draws");
            }
            let mut g = rng::stream(seed, &[0xe7]);
            let (mut s, mut r) = (0.0, 0.0);
            for _ in 0..draws {
                let th = mean + sd * g.sample::<f64, _>(StandardNormal);
                s += th;
                r += dist.ratio(th)?;
            }
            Ok((s / draws as f64, r / draws as f64))
        }
    }
}

/// v_it = E_θ[foc_valuation(θ)] over the latent-bid belief θ ~ N(mean, var).
pub fn expected_valuation(bid_mean: f64, bid_var: f64, max_belief: &MaxBidBelief, alpha: f64, beta: f64, rule: Expectation) -> Result<f64> {
    check_beta(beta)?;
    let dist = max_bid_dist(max_belief)?;
    let (a, r) = valuation_moments(bid_mean, bid_var, &dist, rule)?;
    Ok(a + (1.0 + alpha) / (1.0 + beta) * r)
}

/// Blend-variant expectation; always Monte Carlo.
pub fn expected_valuation_variant(
    bid_mean: f64,
    bid_var: f64,
    max_belief: &MaxBidBelief,
    alpha: f64,
    beta: f64,
    variant: UtilityVariant,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if draws == 0 || !(bid_var >= 0.0) {
        return invalid("Monte Carlo expectation needs draws and a valid variance");
    }
    let dist = max_bid_dist(max_belief)?;
    let sd = bid_var.sqrt();
    let mut g = rng::stream(seed, &[0xe8]);
    let mut s = 0.0;
    for _ in 0..draws {
        let th = bid_mean + sd * g.sample::<f64, _>(StandardNormal);
        s += foc_valuation_variant(th, &dist, alpha, beta, variant)?;
    }
    Ok(s / draws as f64)
}
