//! State-space lines, hierarchy, log posterior and the MCEM estimator.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::data::{AuctionParams, AuctionPanel, AuctionTrace, BidderParams};
use super::model::{max_bid_dist, valuation_moments, Expectation, MaxBidBelief};
use crate::clustering::Partition;
use crate::error::{invalid, Error, Result};
use crate::kalman::{kf_scalar, rts_scalar, ScalarStep};
use crate::optim::{block_annealing, mcem_drive, BlockObjective, BlockSAConfig, MCEMConfig, McemIteration, ObjFn};
use crate::par;
use crate::rng;
use crate::stats::gauss_logpdf;

/// Lower bound applied to every state-space variance.
pub const VAR_FLOOR: f64 = 1e-6;

fn fl(v: f64) -> f64 {
    if v.is_nan() {
        v
    } else {
        v.max(VAR_FLOOR)
    }
}

/// Kalman filter of the bid line: b_t = θ_t + ε, θ_t = τθ_{t−1} + γ + ω.
/// The prior sits at the first displayed board with variance σ_w.
pub fn bid_line(trace: &AuctionTrace, p: &AuctionParams) -> (Vec<ScalarStep>, f64) {
    let obs = trace.amounts();
    let drift = vec![p.gamma; obs.len()];
    kf_scalar(&obs, p.tau, &drift, fl(p.var_w), fl(p.var_v), trace.board[0], fl(p.var_w))
}

/// Kalman filter of the bidder-count line: n_t = κ_t + ζ¹,
/// κ_t = κ_{t−1} + ι + η·trend_t + ξ¹, starting from κ_0 = 0.
pub fn count_line(trace: &AuctionTrace, p: &AuctionParams) -> (Vec<ScalarStep>, f64) {
    let obs: Vec<f64> = trace.counts.iter().map(|&c| c as f64).collect();
    let drift: Vec<f64> = trace.trend.iter().map(|tr| p.iota + p.eta * tr).collect();
    kf_scalar(&obs, 1.0, &drift, fl(p.var_xi1), fl(p.var_zeta1), 0.0, fl(p.var_zeta1))
}

/// Beliefs a bidder holds at one bid epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochBelief {
    /// Predictive latent-bid belief F_{t−1} and bidder count.
    pub max_bid: MaxBidBelief,
    /// Smoothed latent bid at this epoch, integrated over in the valuation.
    pub theta_mean: f64,
    pub theta_var: f64,
}

pub struct AuctionLines {
    pub beliefs: Vec<EpochBelief>,
    pub bid_loglik: f64,
    pub count_loglik: f64,
}

pub fn auction_lines(trace: &AuctionTrace, p: &AuctionParams) -> AuctionLines {
    let (bs, bid_loglik) = bid_line(trace, p);
    let (cs, count_loglik) = count_line(trace, p);
    let sm = rts_scalar(&bs, p.tau);
    let beliefs = (0..trace.len())
        .map(|t| EpochBelief {
            max_bid: MaxBidBelief::from_count(bs[t].pred_mean, bs[t].pred_var, cs[t].pred_mean),
            theta_mean: sm[t].0,
            theta_var: sm[t].1.max(0.0),
        })
        .collect();
    AuctionLines { beliefs, bid_loglik, count_loglik }
}

/// Per-bid (E[θ], E[G/g(θ)]); the valuation is a + c·r with c = (1+α)/(1+β).
pub fn epoch_moments(beliefs: &[EpochBelief], rule: Expectation) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut a = Vec::with_capacity(beliefs.len());
    let mut r = Vec::with_capacity(beliefs.len());
    for (t, e) in beliefs.iter().enumerate() {
        let dist = max_bid_dist(&e.max_bid)?;
        let rule_t = match rule {
            Expectation::MonteCarlo { draws, seed } => Expectation::MonteCarlo { draws, seed: rng::mix(seed, &[t as u64]) },
            g => g,
        };
        let (at, rt) = valuation_moments(e.theta_mean, e.theta_var, &dist, rule_t)?;
        a.push(at);
        r.push(rt);
    }
    Ok((a, r))
}

/// Log-likelihood of the affiliated-valuation line
/// log(v_t − ρ_t·board_t) = log ϑ_t + log δ_t + ζ², log ϑ_t a random walk.
/// The filter starts at the first transformed value with variance σ²_ζ.
pub fn affiliated_loglik(v: &[f64], board: &[f64], rho: &[f64], log_delta: &[f64], var_zeta2: f64, var_xi2: f64) -> Result<f64> {
    Ok(affiliated_filter(v, board, rho, log_delta, var_zeta2, var_xi2)?.1)
}

pub fn affiliated_filter(
    v: &[f64],
    board: &[f64],
    rho: &[f64],
    log_delta: &[f64],
    var_zeta2: f64,
    var_xi2: f64,
) -> Result<(Vec<ScalarStep>, f64)> {
    let n = v.len();
    if board.len() != n || rho.len() != n || log_delta.len() != n {
        return Err(Error::Dimension("affiliated line inputs differ in length".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut y = Vec::with_capacity(n);
    for t in 0..n {
        let floor = rho[t] * board[t];
        if !(v[t] > floor) {
            return Err(Error::BelowLearningFloor { v: v[t], floor });
        }
        y.push((v[t] - floor).ln() - log_delta[t]);
    }
    let drift = vec![0.0; n];
    Ok(kf_scalar(&y, 1.0, &drift, fl(var_xi2), fl(var_zeta2), y[0], fl(var_zeta2)))
}

/// Strength of the variance regularization in [`wls_hierarchy`]:
/// σ̂² = (Σ w e² + ν₀ s₀²) / (Σ w + ν₀).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyConfig {
    pub nu0: f64,
    pub s0_sq: f64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self { nu0: 2.0, s0_sq: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    /// coef[group][param] has one entry per covariate.
    pub coef: Vec<Vec<Vec<f64>>>,
    /// var[group][param].
    pub var: Vec<Vec<f64>>,
    /// Groups whose normal equations needed a ridge.
    pub ridged: Vec<bool>,
    pub pooled_var: Vec<f64>,
}

impl Hierarchy {
    pub fn mean(&self, group: usize, param: usize, cov: &[f64]) -> f64 {
        self.coef[group][param].iter().zip(cov).map(|(b, x)| b * x).sum()
    }

    pub fn log_prior(&self, group: usize, values: &[f64], cov: &[f64]) -> f64 {
        values.iter().enumerate().map(|(k, &x)| gauss_logpdf(x, self.mean(group, k, cov), self.var[group][k])).sum()
    }
}

/// Weighted least squares of each parameter on the unit covariates, one
/// regression per group. A group with no more members than covariates takes
/// the pooled residual variance; singular normal equations get a small ridge
/// and are flagged.
pub fn wls_hierarchy(
    values: &[Vec<f64>],
    covariates: &[Vec<f64>],
    weights: &[f64],
    groups: &Partition,
    cfg: &HierarchyConfig,
) -> Result<Hierarchy> {
    let n = values.len();
    if covariates.len() != n || weights.len() != n || groups.len() != n {
        return Err(Error::Dimension("hierarchy inputs differ in length".into()));
    }
    if n == 0 {
        return invalid("no units for the hierarchy");
    }
    let p = values[0].len();
    let q = covariates[0].len();
    if values.iter().any(|v| v.len() != p) || covariates.iter().any(|c| c.len() != q) || q == 0 {
        return Err(Error::Dimension("ragged hierarchy rows".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return invalid("hierarchy weights must be non-negative");
    }
    let k = groups.k;
    let mut members = vec![Vec::new(); k];
    for (i, &g) in groups.assignment.iter().enumerate() {
        members[g].push(i);
    }
    let mut coef = vec![vec![vec![0.0; q]; p]; k];
    let mut ridged = vec![false; k];
    let mut sse = vec![vec![0.0; p]; k];
    let mut sw = vec![0.0; k];
    let mut has_dof = vec![false; k];
    for g in 0..k {
        let m = &members[g];
        if m.is_empty() {
            continue;
        }
        let mut xtx = DMatrix::<f64>::zeros(q, q);
        let mut xty = DMatrix::<f64>::zeros(q, p);
        for &i in m {
            let w = weights[i];
            let x = DVector::from_column_slice(&covariates[i]);
            xtx += w * &x * x.transpose();
            for c in 0..p {
                for r in 0..q {
                    xty[(r, c)] += w * x[r] * values[i][c];
                }
            }
            sw[g] += w;
        }
        // Exactly collinear covariates can still factor with a zero pivot.
        let chol = if m.len() >= q { xtx.clone().cholesky() } else { None };
        let chol = chol.filter(|c| {
            let d = c.l_dirty().diagonal();
            d.min() > 1e-7 * d.max()
        });
        let chol = match chol {
            Some(c) => c,
            None => {
                ridged[g] = true;
                let lam = 1e-6 * (xtx.trace() / q as f64 + 1.0);
                let mut a = xtx.clone();
                for d in 0..q {
                    a[(d, d)] += lam;
                }
                a.cholesky().ok_or_else(|| Error::Numerical("ridged normal equations not positive definite".into()))?
            }
        };
        let beta = chol.solve(&xty);
        for c in 0..p {
            for r in 0..q {
                coef[g][c][r] = beta[(r, c)];
            }
        }
        has_dof[g] = m.len() > q && sw[g] > 0.0;
        for &i in m {
            for c in 0..p {
                let mu: f64 = (0..q).map(|r| beta[(r, c)] * covariates[i][r]).sum();
                let e = values[i][c] - mu;
                sse[g][c] += weights[i] * e * e;
            }
        }
    }
    let reg = |s: f64, w: f64| ((s + cfg.nu0 * cfg.s0_sq) / (w + cfg.nu0)).max(VAR_FLOOR);
    let mut pooled_var = vec![0.0; p];
    let pw: f64 = (0..k).filter(|&g| has_dof[g]).map(|g| sw[g]).sum();
    for c in 0..p {
        let ps: f64 = (0..k).filter(|&g| has_dof[g]).map(|g| sse[g][c]).sum();
        pooled_var[c] = if pw + cfg.nu0 > 0.0 { reg(ps, pw) } else { cfg.s0_sq.max(1.0) };
    }
    let var = (0..k)
        .map(|g| (0..p).map(|c| if has_dof[g] { reg(sse[g][c], sw[g]) } else { pooled_var[c] }).collect())
        .collect();
    Ok(Hierarchy { coef, var, ridged, pooled_var })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorOptions {
    pub hierarchy: HierarchyConfig,
    pub expectation: Expectation,
    /// Offset of a bidder's k-th bid in an auction is k·log δ instead of log δ.
    pub delta_compounding: bool,
}

impl Default for PosteriorOptions {
    fn default() -> Self {
        Self { hierarchy: HierarchyConfig::default(), expectation: Expectation::GaussHermite, delta_compounding: false }
    }
}

/// Log posterior split by line. The point-mass priors on the variances and
/// hierarchy parameters are plugged in, so `dirac` is always zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorComponents {
    pub bids: f64,
    pub counts: f64,
    pub valuation: f64,
    pub auction_prior: f64,
    pub bidder_prior: f64,
    pub dirac: f64,
    pub total: f64,
}

impl PosteriorComponents {
    fn from_parts(bids: f64, counts: f64, valuation: f64, auction_prior: f64, bidder_prior: f64) -> Self {
        let dirac = 0.0;
        let total = bids + counts + valuation + auction_prior + bidder_prior + dirac;
        Self { bids, counts, valuation, auction_prior, bidder_prior, dirac, total }
    }

    pub fn infeasible() -> Self {
        let m = f64::NEG_INFINITY;
        Self { bids: m, counts: m, valuation: m, auction_prior: m, bidder_prior: m, dirac: 0.0, total: m }
    }
}

/// Per-bid offset multipliers: 1, or the bidder's running bid number.
fn offset_multipliers(trace: &AuctionTrace, compounding: bool) -> Vec<f64> {
    let mut seen: Vec<(usize, usize)> = Vec::new();
    trace
        .bids
        .iter()
        .map(|b| {
            if !compounding {
                return 1.0;
            }
            match seen.iter_mut().find(|(id, _)| *id == b.bidder) {
                Some((_, k)) => {
                    *k += 1;
                    *k as f64
                }
                None => {
                    seen.push((b.bidder, 1));
                    1.0
                }
            }
        })
        .collect()
}

/// Valuation line of one auction given the epoch moments.
fn valuation_loglik(
    trace: &AuctionTrace,
    mult: &[f64],
    a: &[f64],
    r: &[f64],
    bidder_of: &dyn Fn(usize) -> BidderParams,
    p: &AuctionParams,
) -> f64 {
    let n = trace.len();
    let mut v = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    let mut ld = Vec::with_capacity(n);
    for t in 0..n {
        let th = bidder_of(trace.bids[t].bidder);
        if (1.0 + th.beta).abs() < 1e-8 {
            return f64::NEG_INFINITY;
        }
        v.push(a[t] + th.c_ratio() * r[t]);
        rho.push(th.rho);
        ld.push(mult[t] * th.delta.ln());
    }
    affiliated_loglik(&v, &trace.board, &rho, &ld, p.var_zeta2, p.var_xi2).unwrap_or(f64::NEG_INFINITY)
}

fn check_sizes(panel: &AuctionPanel, segs: &Partition, clusters: &Partition, nb: usize, na: usize) -> Result<()> {
    if segs.len() != panel.n_bidders || nb != panel.n_bidders {
        return Err(Error::Dimension(format!("expected {} bidders", panel.n_bidders)));
    }
    if clusters.len() != panel.traces.len() || na != panel.traces.len() {
        return Err(Error::Dimension(format!("expected {} auctions", panel.traces.len())));
    }
    Ok(())
}

fn bidder_hierarchy(panel: &AuctionPanel, segs: &Partition, bidders: &[BidderParams], cfg: &HierarchyConfig) -> Result<Hierarchy> {
    let vals: Vec<Vec<f64>> = bidders.iter().map(|b| b.to_unconstrained().to_vec()).collect();
    let w: Vec<f64> = panel.bidder_bid_counts().iter().map(|&c| c as f64).collect();
    wls_hierarchy(&vals, &panel.bidder_covariates, &w, segs, cfg)
}

fn auction_hierarchy(panel: &AuctionPanel, clusters: &Partition, auctions: &[AuctionParams], cfg: &HierarchyConfig) -> Result<Hierarchy> {
    let vals: Vec<Vec<f64>> = auctions.iter().map(|a| a.to_unconstrained()[..4].to_vec()).collect();
    let w: Vec<f64> = panel.traces.iter().map(|t| t.len() as f64).collect();
    wls_hierarchy(&vals, &panel.auction_covariates, &w, clusters, cfg)
}

/// Model-implied valuation of every bid.
pub fn implied_valuations(panel: &AuctionPanel, bidders: &[BidderParams], auctions: &[AuctionParams], rule: Expectation) -> Result<Vec<Vec<f64>>> {
    let out = par::map_range(panel.traces.len(), |j| -> Result<Vec<f64>> {
        let tr = &panel.traces[j];
        let lines = auction_lines(tr, &auctions[j]);
        let (a, r) = epoch_moments(&lines.beliefs, rule)?;
        Ok((0..tr.len()).map(|t| a[t] + bidders[tr.bids[t].bidder].c_ratio() * r[t]).collect())
    });
    out.into_iter().collect()
}

/// Full log posterior at the given parameters. Hierarchy means and
/// variances are the weighted least-squares fits at these same parameters.
pub fn assemble_log_posterior(
    panel: &AuctionPanel,
    bidder_segments: &Partition,
    auction_clusters: &Partition,
    bidders: &[BidderParams],
    auctions: &[AuctionParams],
    opts: &PosteriorOptions,
) -> Result<PosteriorComponents> {
    check_sizes(panel, bidder_segments, auction_clusters, bidders.len(), auctions.len())?;
    if bidders.iter().any(|b| b.validate().is_err()) || auctions.iter().any(|a| a.validate().is_err()) {
        return Ok(PosteriorComponents::infeasible());
    }
    let per: Vec<(f64, f64, f64)> = par::map_range(panel.traces.len(), |j| {
        let tr = &panel.traces[j];
        let p = &auctions[j];
        let lines = auction_lines(tr, p);
        let rule = match opts.expectation {
            Expectation::MonteCarlo { draws, seed } => Expectation::MonteCarlo { draws, seed: rng::mix(seed, &[j as u64]) },
            g => g,
        };
        let val = match epoch_moments(&lines.beliefs, rule) {
            Ok((a, r)) => {
                let mult = offset_multipliers(tr, opts.delta_compounding);
                valuation_loglik(tr, &mult, &a, &r, &|i| bidders[i], p)
            }
            Err(_) => f64::NEG_INFINITY,
        };
        (lines.bid_loglik, lines.count_loglik, val)
    });
    let bids = par::sum_ordered(&per.iter().map(|x| x.0).collect::<Vec<_>>());
    let counts = par::sum_ordered(&per.iter().map(|x| x.1).collect::<Vec<_>>());
    let valuation = par::sum_ordered(&per.iter().map(|x| x.2).collect::<Vec<_>>());
    let bh = bidder_hierarchy(panel, bidder_segments, bidders, &opts.hierarchy)?;
    let ah = auction_hierarchy(panel, auction_clusters, auctions, &opts.hierarchy)?;
    let bidder_prior: f64 = (0..bidders.len())
        .map(|i| bh.log_prior(bidder_segments.assignment[i], &bidders[i].to_unconstrained(), &panel.bidder_covariates[i]))
        .sum();
    let auction_prior: f64 = (0..auctions.len())
        .map(|j| ah.log_prior(auction_clusters.assignment[j], &auctions[j].to_unconstrained()[..4], &panel.auction_covariates[j]))
        .sum();
    Ok(PosteriorComponents::from_parts(bids, counts, valuation, auction_prior, bidder_prior))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionFitConfig {
    pub mcem: MCEMConfig,
    pub sa: BlockSAConfig,
    /// Starting temperature of iteration k is sa.initial_temperature·decay^k.
    pub temperature_decay: f64,
    pub posterior: PosteriorOptions,
    pub init_rho: f64,
    pub seed: u64,
}

impl Default for AuctionFitConfig {
    fn default() -> Self {
        Self {
            mcem: MCEMConfig::default(),
            sa: BlockSAConfig { initial_temperature: 0.05, cooling_factor: 0.8, sweeps: 20, proposal_scale: 0.05, seed: 0 },
            temperature_decay: 0.9,
            posterior: PosteriorOptions::default(),
            init_rho: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionEstimates {
    pub bidders: Vec<BidderParams>,
    pub auctions: Vec<AuctionParams>,
    pub components: PosteriorComponents,
    pub initial: PosteriorComponents,
    /// Exact log posterior of the best point after each iteration.
    pub posterior_trace: Vec<f64>,
    pub mcem: Vec<McemIteration>,
    pub converged: bool,
    /// Model-implied valuation per bid at the estimates.
    pub valuations: Vec<Vec<f64>>,
}

fn sample_stats(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    (m, v)
}

/// Moment-based starting values for one auction.
pub fn initial_auction_params(trace: &AuctionTrace) -> AuctionParams {
    let b = trace.amounts();
    let db: Vec<f64> = b.windows(2).map(|w| w[1] - w[0]).collect();
    let dc: Vec<f64> = trace.counts.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let (mb, vb) = sample_stats(&db);
    let (mc, vc) = sample_stats(&dc);
    let var_w = vb.max(1e-2);
    AuctionParams {
        tau: 1.0,
        gamma: mb.max(1e-3),
        iota: mc.max(1e-3),
        eta: 1e-2,
        var_v: 0.1 * var_w,
        var_w,
        var_zeta1: 0.1,
        var_xi1: vc.max(1e-2),
        var_zeta2: 1e-2,
        var_xi2: 1e-2,
    }
}

/// Static data shared by every expected objective.
struct Prepared {
    panel: AuctionPanel,
    mult: Vec<Vec<f64>>,
    bidder_auctions: Vec<Vec<usize>>,
    segments: Vec<usize>,
    clusters: Vec<usize>,
    bidder_colors: Vec<Vec<usize>>,
}

impl Prepared {
    fn n_bidders(&self) -> usize {
        self.panel.n_bidders
    }
}

/// Greedy coloring so bidders sharing an auction never share a color.
fn color_bidders(bidder_auctions: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut used_by_auction: Vec<Vec<usize>> = Vec::new();
    let mut colors: Vec<Vec<usize>> = Vec::new();
    for (i, aucs) in bidder_auctions.iter().enumerate() {
        for &j in aucs {
            if used_by_auction.len() <= j {
                used_by_auction.resize(j + 1, Vec::new());
            }
        }
        let mut c = 0;
        while aucs.iter().any(|&j| used_by_auction[j].contains(&c)) {
            c += 1;
        }
        for &j in aucs {
            used_by_auction[j].push(c);
        }
        if colors.len() <= c {
            colors.resize(c + 1, Vec::new());
        }
        colors[c].push(i);
    }
    colors
}

/// The MCEM expected objective: epoch moments and hierarchy fits frozen at
/// the E-step parameters, exact Kalman marginals for the bid and count lines.
struct ExpectedObjective {
    prep: Arc<Prepared>,
    a: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    bh: Hierarchy,
    ah: Hierarchy,
    coords: Vec<Vec<usize>>,
}

impl ExpectedObjective {
    fn bidder(&self, x: &[f64], i: usize) -> BidderParams {
        BidderParams::from_unconstrained(&x[4 * i..4 * i + 4])
    }

    fn auction_u<'a>(&self, x: &'a [f64], j: usize) -> &'a [f64] {
        let o = 4 * self.prep.n_bidders() + 10 * j;
        &x[o..o + 10]
    }

    fn val_ll(&self, x: &[f64], j: usize) -> f64 {
        let p = AuctionParams::from_unconstrained(self.auction_u(x, j));
        let tr = &self.prep.panel.traces[j];
        valuation_loglik(tr, &self.prep.mult[j], &self.a[j], &self.r[j], &|i| self.bidder(x, i), &p)
    }

    fn lines_ll(&self, x: &[f64], j: usize) -> f64 {
        let p = AuctionParams::from_unconstrained(self.auction_u(x, j));
        let tr = &self.prep.panel.traces[j];
        bid_line(tr, &p).1 + count_line(tr, &p).1
    }

    fn bidder_prior(&self, x: &[f64], i: usize) -> f64 {
        self.bh.log_prior(self.prep.segments[i], &x[4 * i..4 * i + 4], &self.prep.panel.bidder_covariates[i])
    }

    fn auction_prior(&self, x: &[f64], j: usize) -> f64 {
        self.ah.log_prior(self.prep.clusters[j], &self.auction_u(x, j)[..4], &self.prep.panel.auction_covariates[j])
    }
}

impl BlockObjective for ExpectedObjective {
    fn dim(&self) -> usize {
        4 * self.prep.n_bidders() + 10 * self.prep.panel.traces.len()
    }
    fn n_blocks(&self) -> usize {
        self.coords.len()
    }
    fn block_coords(&self, b: usize) -> &[usize] {
        &self.coords[b]
    }
    fn block_value(&self, b: usize, x: &[f64]) -> f64 {
        let nb = self.prep.n_bidders();
        if b < nb {
            let mut s = self.bidder_prior(x, b);
            for &j in &self.prep.bidder_auctions[b] {
                s += self.val_ll(x, j);
            }
            s
        } else {
            let j = b - nb;
            self.lines_ll(x, j) + self.val_ll(x, j) + self.auction_prior(x, j)
        }
    }
    fn total(&self, x: &[f64]) -> f64 {
        let nj = self.prep.panel.traces.len();
        let per = par::map_range(nj, |j| self.lines_ll(x, j) + self.val_ll(x, j) + self.auction_prior(x, j));
        let mut s = par::sum_ordered(&per);
        for i in 0..self.prep.n_bidders() {
            s += self.bidder_prior(x, i);
        }
        s
    }
    fn colors(&self) -> Vec<Vec<usize>> {
        let nb = self.prep.n_bidders();
        let mut out = vec![(0..self.prep.panel.traces.len()).map(|j| nb + j).collect::<Vec<_>>()];
        out.extend(self.prep.bidder_colors.iter().cloned());
        out
    }
}

fn decode(x: &[f64], nb: usize, na: usize) -> (Vec<BidderParams>, Vec<AuctionParams>) {
    let b = (0..nb).map(|i| BidderParams::from_unconstrained(&x[4 * i..4 * i + 4])).collect();
    let a = (0..na).map(|j| AuctionParams::from_unconstrained(&x[4 * nb + 10 * j..4 * nb + 10 * j + 10])).collect();
    (b, a)
}

fn encode(bidders: &[BidderParams], auctions: &[AuctionParams]) -> Vec<f64> {
    let mut x = Vec::with_capacity(4 * bidders.len() + 10 * auctions.len());
    for b in bidders {
        x.extend_from_slice(&b.to_unconstrained());
    }
    for a in auctions {
        x.extend_from_slice(&a.to_unconstrained());
    }
    x
}

/// MAP estimation by Monte Carlo EM. Each E-step smooths the bid and count
/// lines at the current parameters, freezes the per-bid valuation moments and
/// refits the hierarchy; each M-step runs block simulated annealing on the
/// resulting expected objective. The best point under the exact posterior is
/// returned, so the result never scores below the starting values.
pub fn fit_auction(
    panel: &AuctionPanel,
    bidder_segments: &Partition,
    auction_clusters: &Partition,
    config: &AuctionFitConfig,
) -> Result<AuctionEstimates> {
    let nb = panel.n_bidders;
    let na = panel.traces.len();
    check_sizes(panel, bidder_segments, auction_clusters, nb, na)?;
    if !(config.init_rho > 0.0) {
        return invalid("init_rho must be positive");
    }
    if !(config.temperature_decay > 0.0 && config.temperature_decay <= 1.0) {
        return invalid("temperature_decay must lie in (0,1]");
    }
    let opts = config.posterior;
    let bidders0 = vec![BidderParams { alpha: 0.0, beta: 0.0, delta: 1.0, rho: config.init_rho }; nb];
    let auctions0: Vec<AuctionParams> = panel.traces.iter().map(initial_auction_params).collect();
    let initial = assemble_log_posterior(panel, bidder_segments, auction_clusters, &bidders0, &auctions0, &opts)?;
    if !initial.total.is_finite() {
        return Err(Error::Numerical("log posterior not finite at the starting values".into()));
    }
    let bidder_auctions = panel.bidder_auctions();
    let prep = Arc::new(Prepared {
        mult: panel.traces.iter().map(|t| offset_multipliers(t, opts.delta_compounding)).collect(),
        bidder_colors: color_bidders(&bidder_auctions),
        bidder_auctions,
        segments: bidder_segments.assignment.clone(),
        clusters: auction_clusters.assignment.clone(),
        panel: panel.clone(),
    });
    let mut coords: Vec<Vec<usize>> = (0..nb).map(|i| (4 * i..4 * i + 4).collect()).collect();
    coords.extend((0..na).map(|j| (4 * nb + 10 * j..4 * nb + 10 * j + 10).collect::<Vec<_>>()));
    let coords = Arc::new(coords);

    let x0 = encode(&bidders0, &auctions0);
    let current: RefCell<Option<Arc<ExpectedObjective>>> = RefCell::new(None);
    let best = RefCell::new((x0.clone(), initial));
    let trace = RefCell::new(Vec::new());

    let e_step = |x: &[f64], it: usize| -> Result<Box<ObjFn<'static>>> {
        let (bs, aus) = decode(x, nb, na);
        let rule = match opts.expectation {
            Expectation::MonteCarlo { draws, seed } => Expectation::MonteCarlo { draws, seed: rng::mix(seed, &[it as u64]) },
            g => g,
        };
        let mom: Vec<Result<(Vec<f64>, Vec<f64>)>> = par::map_range(na, |j| {
            let lines = auction_lines(&prep.panel.traces[j], &aus[j]);
            let rule_j = match rule {
                Expectation::MonteCarlo { draws, seed } => Expectation::MonteCarlo { draws, seed: rng::mix(seed, &[j as u64]) },
                g => g,
            };
            epoch_moments(&lines.beliefs, rule_j)
        });
        let mut a = Vec::with_capacity(na);
        let mut r = Vec::with_capacity(na);
        for m in mom {
            let (aj, rj) = m?;
            a.push(aj);
            r.push(rj);
        }
        let obj = Arc::new(ExpectedObjective {
            prep: prep.clone(),
            a,
            r,
            bh: bidder_hierarchy(panel, bidder_segments, &bs, &opts.hierarchy)?,
            ah: auction_hierarchy(panel, auction_clusters, &aus, &opts.hierarchy)?,
            coords: (*coords).clone(),
        });
        *current.borrow_mut() = Some(obj.clone());
        Ok(Box::new(move |x: &[f64]| obj.total(x)))
    };

    let m_step = |_q: &ObjFn<'static>, x: &[f64], it: usize| -> Result<Vec<f64>> {
        let obj = current.borrow().clone().ok_or_else(|| Error::Numerical("M-step before E-step".into()))?;
        let sa = BlockSAConfig {
            initial_temperature: config.sa.initial_temperature * config.temperature_decay.powi(it as i32),
            seed: rng::mix(config.seed, &[0x5a, it as u64]),
            ..config.sa.clone()
        };
        let res = block_annealing(&*obj, x, &sa)?;
        let (bs, aus) = decode(&res.x, nb, na);
        let exact = assemble_log_posterior(panel, bidder_segments, auction_clusters, &bs, &aus, &opts)?;
        let mut b = best.borrow_mut();
        let out = if exact.total.is_finite() {
            if exact.total > b.1.total {
                *b = (res.x.clone(), exact);
            }
            res.x
        } else {
            x.to_vec()
        };
        trace.borrow_mut().push(b.1.total);
        Ok(out)
    };

    let res = mcem_drive(e_step, m_step, &config.mcem, &x0)?;
    let (xb, comp) = best.into_inner();
    let (bidders, auctions) = decode(&xb, nb, na);
    let valuations = implied_valuations(panel, &bidders, &auctions, opts.expectation)?;
    Ok(AuctionEstimates {
        bidders,
        auctions,
        components: comp,
        initial,
        posterior_trace: trace.into_inner(),
        mcem: res.trace,
        converged: res.converged,
        valuations,
    })
}
