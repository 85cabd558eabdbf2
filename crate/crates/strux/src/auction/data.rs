//! Parameter and data types for the auction model.

use crate::error::{invalid, Result};

/// Per-bidder parameters Θ_i.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidderParams {
    /// Winner-regret coefficient.
    pub alpha: f64,
    /// Loser-regret coefficient.
    pub beta: f64,
    /// Valuation revelation multiplier.
    pub delta: f64,
    /// Weight on the displayed board bid.
    pub rho: f64,
}

impl BidderParams {
    pub const DIM: usize = 4;
    pub const NAMES: [&'static str; 4] = ["alpha", "beta", "delta", "rho"];

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return invalid("non-finite regret coefficient");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return invalid(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return invalid(format!("rho must be non-negative, got {}", self.rho));
        }
        Ok(())
    }

    /// (α, β, ln δ, ln ρ).
    pub fn to_unconstrained(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.delta.ln(), self.rho.ln()]
    }

    pub fn from_unconstrained(u: &[f64]) -> Self {
        Self { alpha: u[0], beta: u[1], delta: u[2].exp(), rho: u[3].exp() }
    }

    pub fn c_ratio(&self) -> f64 {
        (1.0 + self.alpha) / (1.0 + self.beta)
    }
}

/// Per-auction parameters Ψ_j and the six state-space variances Σ_j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuctionParams {
    /// Latent-bid evolution factor.
    pub tau: f64,
    /// Latent-bid drift.
    pub gamma: f64,
    /// Entrance rate per bid.
    pub iota: f64,
    /// Multiplier on the time trend in the entrance rate.
    pub eta: f64,
    /// Bid observation noise.
    pub var_v: f64,
    /// Latent-bid evolution noise.
    pub var_w: f64,
    /// Bidder-count observation noise.
    pub var_zeta1: f64,
    /// Bidder-count evolution noise.
    pub var_xi1: f64,
    /// Private valuation signal.
    pub var_zeta2: f64,
    /// Common valuation signal.
    pub var_xi2: f64,
}

impl AuctionParams {
    pub const DIM: usize = 10;
    pub const NAMES: [&'static str; 10] =
        ["tau", "gamma", "iota", "eta", "var_v", "var_w", "var_zeta1", "var_xi1", "var_zeta2", "var_xi2"];

    pub fn to_vec(&self) -> [f64; 10] {
        [
            self.tau,
            self.gamma,
            self.iota,
            self.eta,
            self.var_v,
            self.var_w,
            self.var_zeta1,
            self.var_xi1,
            self.var_zeta2,
            self.var_xi2,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            tau: v[0],
            gamma: v[1],
            iota: v[2],
            eta: v[3],
            var_v: v[4],
            var_w: v[5],
            var_zeta1: v[6],
            var_xi1: v[7],
            var_zeta2: v[8],
            var_xi2: v[9],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return invalid("non-finite auction parameter");
        }
        if v[..4].iter().any(|&x| x < 0.0) {
            return invalid("tau, gamma, iota and eta must be non-negative");
        }
        if v[4..].iter().any(|&x| x <= 0.0) {
            return invalid("state-space variances must be positive");
        }
        Ok(())
    }

    /// Every coordinate on the log scale.
    pub fn to_unconstrained(&self) -> [f64; 10] {
        self.to_vec().map(f64::ln)
    }

    pub fn from_unconstrained(u: &[f64]) -> Self {
        let v: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        Self::from_slice(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bid {
    pub bidder: usize,
    pub amount: f64,
}

/// One auction's bid history, sorted by amount.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionTrace {
    pub id: usize,
    pub cluster: usize,
    pub bids: Vec<Bid>,
    /// Board bid each bidder saw before bidding.
    pub board: Vec<f64>,
    /// Cumulative distinct bidders including the current one.
    pub counts: Vec<usize>,
    pub trend: Vec<f64>,
}

impl AuctionTrace {
    pub fn new(id: usize, cluster: usize, bids: Vec<Bid>, board: Vec<f64>, counts: Vec<usize>, trend: Vec<f64>) -> Result<Self> {
        let t = Self { id, cluster, bids, board, counts, trend };
        t.validate()?;
        Ok(t)
    }

    /// Sorts the bids ascending (stable) and derives the board as the
    /// highest earlier bid by someone else, never below `reserve`; counts are
    /// cumulative distinct bidders and the trend is t/T.
    pub fn from_bids(id: usize, cluster: usize, mut bids: Vec<Bid>, reserve: f64) -> Result<Self> {
        if bids.is_empty() {
            return invalid(format!("auction {id} has no bids"));
        }
        if !(reserve > 0.0) {
            return invalid("reserve must be positive");
        }
        bids.sort_by(|a, b| a.amount.total_cmp(&b.amount));
        let n = bids.len();
        let mut board = Vec::with_capacity(n);
        let mut counts = Vec::with_capacity(n);
        let mut seen: Vec<usize> = Vec::new();
        for t in 0..n {
            let me = bids[t].bidder;
            let top = bids[..t].iter().filter(|b| b.bidder != me).map(|b| b.amount).fold(reserve, f64::max);
            board.push(top);
            if !seen.contains(&me) {
                seen.push(me);
            }
            counts.push(seen.len());
        }
        let trend = (1..=n).map(|t| t as f64 / n as f64).collect();
        Self::new(id, cluster, bids, board, counts, trend)
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    pub fn amounts(&self) -> Vec<f64> {
        self.bids.iter().map(|b| b.amount).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.bids.len();
        if n == 0 {
            return invalid(format!("auction {} has no bids", self.id));
        }
        if self.board.len() != n || self.counts.len() != n || self.trend.len() != n {
            return invalid(format!("auction {}: column lengths differ", self.id));
        }
        if self.bids.iter().any(|b| !(b.amount > 0.0 && b.amount.is_finite())) {
            return invalid(format!("auction {}: bids must be positive", self.id));
        }
        if self.bids.windows(2).any(|w| w[1].amount < w[0].amount) {
            return invalid(format!("auction {}: bids must be sorted ascending", self.id));
        }
        if self.board.iter().any(|b| !(*b > 0.0 && b.is_finite())) || self.board.windows(2).any(|w| w[1] < w[0]) {
            return invalid(format!("auction {}: board bids must be positive and non-decreasing", self.id));
        }
        if self.counts[0] == 0 || self.counts.windows(2).any(|w| w[1] < w[0]) {
            return invalid(format!("auction {}: counts must be positive and non-decreasing", self.id));
        }
        if self.trend.iter().any(|x| !x.is_finite()) {
            return invalid(format!("auction {}: non-finite time trend", self.id));
        }
        Ok(())
    }
}

/// Traces plus the unit-level covariates used by the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionPanel {
    pub traces: Vec<AuctionTrace>,
    pub n_bidders: usize,
    pub bidder_covariates: Vec<Vec<f64>>,
    pub auction_covariates: Vec<Vec<f64>>,
}

impl AuctionPanel {
    /// Intercept-only covariates; bidder count is one past the largest id.
    pub fn new(traces: Vec<AuctionTrace>) -> Result<Self> {
        let n_bidders = traces.iter().flat_map(|t| t.bids.iter().map(|b| b.bidder + 1)).max().unwrap_or(0);
        let nj = traces.len();
        Self::with_covariates(traces, vec![vec![1.0]; n_bidders], vec![vec![1.0]; nj])
    }

    pub fn with_covariates(traces: Vec<AuctionTrace>, bidder_covariates: Vec<Vec<f64>>, auction_covariates: Vec<Vec<f64>>) -> Result<Self> {
        if traces.is_empty() {
            return invalid("panel has no auctions");
        }
        for t in &traces {
            t.validate()?;
        }
        let n_bidders = bidder_covariates.len();
        if traces.iter().flat_map(|t| &t.bids).any(|b| b.bidder >= n_bidders) {
            return invalid("bidder id without a covariate row");
        }
        if auction_covariates.len() != traces.len() {
            return invalid("one covariate row per auction required");
        }
        for rows in [&bidder_covariates, &auction_covariates] {
            if let Some(q) = rows.first().map(|r| r.len()) {
                if q == 0 || rows.iter().any(|r| r.len() != q || r.iter().any(|x| !x.is_finite())) {
                    return invalid("covariate rows must be non-empty, finite and of equal length");
                }
            }
        }
        Ok(Self { traces, n_bidders, bidder_covariates, auction_covariates })
    }

    pub fn n_bids(&self) -> usize {
        self.traces.iter().map(|t| t.len()).sum()
    }

    /// Auctions each bidder takes part in, ascending.
    pub fn bidder_auctions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_bidders];
        for (j, t) in self.traces.iter().enumerate() {
            for b in &t.bids {
                if out[b.bidder].last() != Some(&j) {
                    out[b.bidder].push(j);
                }
            }
        }
        out
    }

    /// Bids per bidder, used as hierarchy weights.
    pub fn bidder_bid_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_bidders];
        for b in self.traces.iter().flat_map(|t| &t.bids) {
            c[b.bidder] += 1;
        }
        c
    }
}
