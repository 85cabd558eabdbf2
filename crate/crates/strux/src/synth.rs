//! Ground-truth data generators and the proxy-bid engine.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};

use crate::auction::{foc_bid, AuctionPanel, AuctionParams, AuctionTrace, Bid, BidderParams, MaxBidBelief, NormalMaxBid, VAR_FLOOR};
use crate::designs::{ActivityEvent, ActivityKind, BadgeEvent, BadgeLevel, LeaderboardEntry, GAMIFICATION_COLUMNS};
use crate::diffusion::{simulate_diffusion, JointDiffusionModel, SimulatedDiffusion};
use crate::dpmix::{logit_probs, UnitData};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::rng::{self, Rng};
use crate::stats::{self, expit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyAuctionConfig {
    pub reserve: f64,
    pub increment: f64,
}

impl Default for ProxyAuctionConfig {
    fn default() -> Self {
        Self { reserve: 25.0, increment: 1.0 }
    }
}

/// Result of feeding one bid to the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BidOutcome {
    /// Accepted; the displayed board afterwards.
    Accepted(f64),
    /// Below the displayed board (or the reserve); ignored.
    Invalid,
}

/// Second-price proxy engine: the board shows the second-highest proxy plus
/// one increment, capped at the highest proxy. Equal proxies keep the
/// earlier bidder in the lead.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyEngine {
    pub cfg: ProxyAuctionConfig,
    /// (bidder, proxy) of the leader.
    leader: Option<(usize, f64)>,
    /// Highest proxy among everyone but the leader.
    second: Option<f64>,
    board: f64,
}

impl ProxyEngine {
    pub fn new(cfg: ProxyAuctionConfig) -> Result<Self> {
        if !(cfg.reserve > 0.0 && cfg.increment > 0.0) {
            return invalid("reserve and increment must be positive");
        }
        Ok(Self { cfg, leader: None, second: None, board: cfg.reserve })
    }

    pub fn board(&self) -> f64 {
        self.board
    }

    pub fn leader(&self) -> Option<usize> {
        self.leader.map(|l| l.0)
    }

    pub fn submit(&mut self, bidder: usize, amount: f64) -> BidOutcome {
        let floor = if self.leader.is_some() { self.board } else { self.cfg.reserve };
        if !amount.is_finite() || amount < floor {
            return BidOutcome::Invalid;
        }
        match self.leader {
            None => {
                self.leader = Some((bidder, amount));
                self.board = self.cfg.reserve;
            }
            Some((lb, lp)) if lb == bidder => {
                // The leader raising their own maximum does not move the board.
                self.leader = Some((lb, lp.max(amount)));
            }
            Some((lb, lp)) => {
                if amount > lp {
                    self.leader = Some((bidder, amount));
                    self.second = Some(self.second.map_or(lp, |s| s.max(lp)));
                } else {
                    self.leader = Some((lb, lp));
                    self.second = Some(self.second.map_or(amount, |s| s.max(amount)));
                }
                let (_, top) = self.leader.expect("leader set");
                let second = self.second.expect("second set");
                self.board = (second + self.cfg.increment).min(top).max(self.cfg.reserve);
            }
        }
        BidOutcome::Accepted(self.board)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyRun {
    /// Board after every submitted bid; unchanged after an invalid one.
    pub board: Vec<f64>,
    /// Index of the winning bid in the input.
    pub winner: Option<usize>,
    pub price: f64,
    /// Indices of bids flagged as invalid.
    pub invalid: Vec<usize>,
}

/// Run the engine on bids from distinct bidders, in time order.
pub fn proxy_bid_engine(proxies: &[f64], cfg: ProxyAuctionConfig) -> Result<ProxyRun> {
    if proxies.iter().any(|p| !(*p > 0.0)) {
        return invalid("proxy bids must be positive");
    }
    let mut e = ProxyEngine::new(cfg)?;
    let mut board = Vec::with_capacity(proxies.len());
    let mut bad = Vec::new();
    for (i, &p) in proxies.iter().enumerate() {
        if e.submit(i, p) == BidOutcome::Invalid {
            bad.push(i);
        }
        board.push(e.board());
    }
    Ok(ProxyRun { board, winner: e.leader(), price: e.board(), invalid: bad })
}

/// One row of the adoption CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdoptionRow {
    pub category: usize,
    pub t: usize,
    pub y: f64,
}

/// Simulated adoption series as CSV rows, category-major.
pub fn gen_diffusion(model: &JointDiffusionModel, t: usize, seed: u64, noiseless: bool) -> Result<(Vec<AdoptionRow>, SimulatedDiffusion)> {
    let sim = simulate_diffusion(model, t, seed, noiseless)?;
    let rows = sim.y.iter().enumerate().flat_map(|(j, s)| s.iter().enumerate().map(move |(t, &y)| AdoptionRow { category: j, t, y })).collect();
    Ok((rows, sim))
}

/// Finite mixture of normal coefficient distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTruth {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl MixtureTruth {
    fn validate(&self) -> Result<usize> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.covs.len() != k {
            return invalid("one mean and covariance per mixture weight required");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("mixture weights must form a simplex");
        }
        let d = self.means[0].len();
        if self.means.iter().any(|m| m.len() != d) || self.covs.iter().any(|c| c.shape() != (d, d)) {
            return Err(Error::Dimension("mixture components differ in dimension".into()));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceTruth {
    pub lambda: Vec<Vec<f64>>,
    pub component: Vec<usize>,
}

/// Draws the covariates of the J inside alternatives for (unit, period).
pub type DesignGenerator<'a> = dyn Fn(&mut Rng, usize, usize) -> Vec<Vec<f64>> + Sync + 'a;

/// Alternative dummies followed by `extra` standard-normal covariates per
/// alternative: d = J + extra.
pub fn dummy_design(alternatives: usize, extra: usize) -> impl Fn(&mut Rng, usize, usize) -> Vec<Vec<f64>> + Sync {
    move |r: &mut Rng, _u, _t| {
        (0..alternatives)
            .map(|j| {
                let mut row = vec![0.0; alternatives];
                row[j] = 1.0;
                row.extend((0..extra).map(|_| r.sample::<f64, _>(StandardNormal)));
                row
            })
            .collect()
    }
}

/// Multinomial panel with unit coefficients drawn from `truth`.
pub fn gen_choice_panel(truth: &MixtureTruth, design: &DesignGenerator<'_>, units: usize, periods: usize, seed: u64) -> Result<(Vec<UnitData>, ChoiceTruth)> {
    let d = truth.validate()?;
    if units == 0 || periods == 0 {
        return invalid("units and periods must be positive");
    }
    let lw: Vec<f64> = truth.weights.iter().map(|w| w.ln()).collect();
    let drawn = par::map_range(units, |i| -> Result<(UnitData, Vec<f64>, usize)> {
        let mut r = rng::stream(seed, &[0xc4, i as u64]);
        let k = stats::categorical_log(&mut r, &lw);
        let lam = stats::mvn_draw(&mut r, &truth.means[k], &truth.covs[k])?;
        let lam: Vec<f64> = lam.iter().copied().collect();
        let mut designs = Vec::with_capacity(periods);
        let mut choices = Vec::with_capacity(periods);
        for t in 0..periods {
            let x = design(&mut r, i, t);
            if x.iter().any(|row| row.len() != d) {
                return Err(Error::Dimension(format!("design rows must have {d} entries")));
            }
            let v: Vec<f64> = x.iter().map(|row| row.iter().zip(&lam).map(|(a, b)| a * b).sum()).collect();
            let p = logit_probs(&v);
            let lp: Vec<f64> = p.iter().map(|q| q.ln()).collect();
            choices.push(stats::categorical_log(&mut r, &lp));
            designs.push(x);
        }
        Ok((UnitData::multinomial(i, &designs, &choices, Vec::new())?, lam, k))
    });
    let mut data = Vec::with_capacity(units);
    let mut truth_out = ChoiceTruth { lambda: Vec::with_capacity(units), component: Vec::with_capacity(units) };
    for item in drawn {
        let (u, l, k) = item?;
        data.push(u);
        truth_out.lambda.push(l);
        truth_out.component.push(k);
    }
    Ok((data, truth_out))
}

/// Settings of the contribution simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct GamificationSimConfig {
    pub days: usize,
    pub week_len: usize,
    pub n_trials: u32,
    /// Cumulative reputation needed for bronze, silver and gold.
    pub thresholds: [f64; 3],
    /// Users below this cumulative reputation stay off the leaderboard.
    pub leaderboard_min: f64,
    /// Daily chance of each reciprocity kind once a user has contributed.
    pub reciprocity_rate: f64,
}

impl Default for GamificationSimConfig {
    fn default() -> Self {
        Self { days: 56, week_len: 7, n_trials: 1, thresholds: [100.0, 400.0, 1000.0], leaderboard_min: 0.0, reciprocity_rate: 0.05 }
    }
}

/// Reputation earned per event.
pub fn reputation_points(kind: ActivityKind) -> f64 {
    match kind {
        ActivityKind::Comment => 1.0,
        ActivityKind::PostAnswered => 10.0,
        ActivityKind::Revision => 2.0,
        ActivityKind::Accepted => 15.0,
        ActivityKind::Review => 2.0,
        ActivityKind::PostAsked => 5.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamificationLogs {
    pub activities: Vec<ActivityEvent>,
    pub leaderboard: Vec<LeaderboardEntry>,
    pub badges: Vec<BadgeEvent>,
    /// Per user and day, the 14 covariates the simulator used, with the
    /// contribution column not demeaned.
    pub designs: Vec<Vec<[f64; 14]>>,
}

#[derive(Clone, Default)]
struct UserState {
    cont: u32,
    rcv: u32,
    rep_total: f64,
    week_points: f64,
    crep: f64,
    rep_prev: f64,
    rank_prev: Option<u32>,
    rank_prior: Option<u32>,
    bdg_prev: [u32; 3],
    cbdg: [u32; 3],
    earned: [bool; 3],
    today_cont: u32,
    today_rcv: u32,
    today_bdg: [u32; 3],
}

/// Forward simulation of daily contributions under unit coefficients
/// `lambda` (one 14-vector per user, in [`GAMIFICATION_COLUMNS`] order).
/// Badges are granted once per level when cumulative reputation crosses its
/// threshold; the weekly leaderboard ranks users by cumulative reputation,
/// ties by id.
pub fn gen_gamification(lambda: &[Vec<f64>], cfg: &GamificationSimConfig, seed: u64) -> Result<GamificationLogs> {
    let n = lambda.len();
    if lambda.iter().any(|l| l.len() != GAMIFICATION_COLUMNS.len()) {
        return Err(Error::Dimension("each user needs 14 coefficients".into()));
    }
    if !(cfg.thresholds[0] < cfg.thresholds[1] && cfg.thresholds[1] < cfg.thresholds[2]) {
        return invalid("badge thresholds must increase from bronze to gold");
    }
    if cfg.days == 0 || cfg.week_len == 0 || cfg.n_trials == 0 {
        return invalid("days, week length and trials must be positive");
    }
    let mut st = vec![UserState::default(); n];
    let mut logs = GamificationLogs { activities: Vec::new(), leaderboard: Vec::new(), badges: Vec::new(), designs: vec![Vec::with_capacity(cfg.days); n] };
    let contrib_kinds = [ActivityKind::Comment, ActivityKind::PostAnswered, ActivityKind::Revision];
    let recip_kinds = [ActivityKind::Accepted, ActivityKind::Review, ActivityKind::PostAsked];
    // Gold, silver, bronze slots; thresholds are given bronze first.
    let level_threshold = [cfg.thresholds[2], cfg.thresholds[1], cfg.thresholds[0]];
    let levels = [BadgeLevel::Gold, BadgeLevel::Silver, BadgeLevel::Bronze];
    for day in 0..cfg.days {
        let week = day / cfg.week_len;
        let results = par::map_range(n, |i| {
            let s = &st[i];
            let mut r = rng::stream(seed, &[0x9a, i as u64, day as u64]);
            let drnk = match (s.rank_prev, s.rank_prior) {
                (Some(a), Some(b)) => a as f64 - b as f64,
                _ => 0.0,
            };
            let x = [
                1.0,
                s.cont as f64 / 100.0,
                s.rcv as f64 / 100.0,
                s.crep / 100.0,
                s.rep_prev / 100.0,
                s.rank_prev.map_or(0.0, |v| v as f64) / 100.0,
                drnk / 100.0,
                f64::from(u8::from(s.rank_prev.is_none())),
                s.bdg_prev[0] as f64,
                s.bdg_prev[1] as f64,
                s.bdg_prev[2] as f64,
                s.cbdg[0] as f64,
                s.cbdg[1] as f64,
                s.cbdg[2] as f64,
            ];
            let u: f64 = x.iter().zip(&lambda[i]).map(|(a, b)| a * b).sum();
            let k = Binomial::new(u64::from(cfg.n_trials), expit(u)).map(|b| b.sample(&mut r) as u32).unwrap_or(0);
            let mut events = Vec::new();
            for _ in 0..k {
                events.push(contrib_kinds[r.random_range(0..3)]);
            }
            // Others only respond to users with past contributions.
            for kind in recip_kinds {
                if s.cont > 0 && r.random::<f64>() < cfg.reciprocity_rate {
                    events.push(kind);
                }
            }
            (x, events)
        });
        for (i, (x, events)) in results.into_iter().enumerate() {
            logs.designs[i].push(x);
            let s = &mut st[i];
            s.today_cont = 0;
            s.today_rcv = 0;
            s.today_bdg = [0; 3];
            for kind in events {
                logs.activities.push(ActivityEvent { user: i, day, kind });
                if kind.is_contribution() {
                    s.today_cont += 1;
                } else {
                    s.today_rcv += 1;
                }
                s.rep_total += reputation_points(kind);
                s.week_points += reputation_points(kind);
            }
            // Lower levels are checked first so bronze precedes silver on the same day.
            for slot in (0..3).rev() {
                if !s.earned[slot] && s.rep_total >= level_threshold[slot] {
                    s.earned[slot] = true;
                    s.today_bdg[slot] += 1;
                    logs.badges.push(BadgeEvent { user: i, day, level: levels[slot] });
                }
            }
        }
        for s in &mut st {
            s.cont += s.today_cont;
            s.rcv += s.today_rcv;
            s.bdg_prev = s.today_bdg;
            for l in 0..3 {
                s.cbdg[l] += s.today_bdg[l];
            }
        }
        let week_ends = (day + 1) % cfg.week_len == 0 || day + 1 == cfg.days;
        if week_ends {
            let mut order: Vec<usize> = (0..n).filter(|&i| st[i].rep_total > cfg.leaderboard_min).collect();
            order.sort_by(|&a, &b| st[b].rep_total.total_cmp(&st[a].rep_total).then(a.cmp(&b)));
            let mut rank_of = vec![None; n];
            for (pos, &i) in order.iter().enumerate() {
                let rank = pos as u32 + 1;
                rank_of[i] = Some(rank);
                logs.leaderboard.push(LeaderboardEntry { user: i, week, rank, points: st[i].week_points });
            }
            for (i, s) in st.iter_mut().enumerate() {
                s.rank_prior = s.rank_prev;
                s.rank_prev = rank_of[i];
                s.rep_prev = if rank_of[i].is_some() { s.week_points } else { 0.0 };
                s.crep += s.rep_prev;
                s.week_points = 0.0;
            }
        }
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionSimConfig {
    pub auctions: usize,
    /// Mean number of bid attempts per bidder (at least one each).
    pub bids_per_bidder: f64,
    pub reserve: f64,
    /// Common value level at the start of every auction.
    pub initial_value: f64,
    /// Auctions are assigned to clusters round-robin.
    pub clusters: usize,
}

impl Default for AuctionSimConfig {
    fn default() -> Self {
        Self { auctions: 10, bids_per_bidder: 4.8, reserve: 25.0, initial_value: 60.0, clusters: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionSim {
    pub panel: AuctionPanel,
    pub bidders: Vec<BidderParams>,
    pub auctions: Vec<AuctionParams>,
    /// True valuation behind every recorded bid.
    pub valuations: Vec<Vec<f64>>,
    /// Attempts dropped because the stationary bid did not beat the top bid.
    pub skipped: usize,
}

/// Synthetic auctions from the structural model. Bidder i takes part in
/// auction i mod auctions, so bidder counts differ by at most one. At each attempt the bidder forms the
/// Kalman beliefs on the bids so far, draws an affiliated valuation
/// v = ρ·board + exp(log ϑ + log δ + ζ) and bids the first-order-condition
/// stationary point. Attempts whose bid would not exceed the current top bid
/// are dropped, so recorded bids ascend and the estimator sees the same
/// sequence the bidders filtered.
pub fn gen_auction(bidders: &[BidderParams], auctions: &[AuctionParams], cfg: &AuctionSimConfig, seed: u64) -> Result<AuctionSim> {
    if cfg.auctions == 0 || auctions.len() != cfg.auctions || bidders.len() < cfg.auctions {
        return Err(Error::Dimension("need one parameter set per auction and at least one bidder per auction".into()));
    }
    if !(cfg.reserve > 0.0 && cfg.initial_value > 0.0 && cfg.bids_per_bidder >= 1.0 && cfg.clusters > 0) {
        return invalid("reserve, initial value and bids per bidder must be positive");
    }
    for b in bidders {
        b.validate()?;
    }
    for a in auctions {
        a.validate()?;
    }
    let fl = |v: f64| v.max(VAR_FLOOR);
    let per: Vec<Result<(AuctionTrace, Vec<f64>, usize)>> = par::map_range(cfg.auctions, |j| {
        let p = &auctions[j];
        let mut r = rng::stream(seed, &[0xa5, j as u64]);
        let mut events = Vec::new();
        for i in (j..bidders.len()).step_by(cfg.auctions) {
            let extra = if cfg.bids_per_bidder > 1.0 {
                Poisson::new(cfg.bids_per_bidder - 1.0).map_err(|e| Error::Invalid(e.to_string()))?.sample(&mut r) as usize
            } else {
                0
            };
            events.extend(std::iter::repeat_n(i, 1 + extra));
        }
        events.shuffle(&mut r);
        let total = events.len() as f64;
        let (mut bm, mut bp) = (cfg.reserve, fl(p.var_w));
        let (mut cm, mut cp) = (0.0, fl(p.var_zeta1));
        let mut log_theta = cfg.initial_value.ln();
        let mut bids: Vec<Bid> = Vec::new();
        let (mut board, mut counts, mut trend, mut vals) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut seen: Vec<usize> = Vec::new();
        let mut skipped = 0;
        for (e, &i) in events.iter().enumerate() {
            let th = &bidders[i];
            let tr = (e + 1) as f64 / total;
            let mp = p.tau * bm + p.gamma;
            let pp = p.tau * p.tau * bp + fl(p.var_w);
            let kp = cm + p.iota + p.eta * tr;
            let kpp = cp + fl(p.var_xi1);
            let belief = MaxBidBelief::from_count(mp, pp, kp);
            let dist = NormalMaxBid { mean: mp, sd: pp.sqrt(), n: belief.n };
            let shown = bids.iter().filter(|b| b.bidder != i).map(|b| b.amount).fold(cfg.reserve, f64::max);
            let top = bids.last().map_or(0.0, |b| b.amount);
            let xi = fl(p.var_xi2).sqrt() * r.sample::<f64, _>(StandardNormal);
            let zeta = fl(p.var_zeta2).sqrt() * r.sample::<f64, _>(StandardNormal);
            let lt = log_theta + xi;
            let v = th.rho * shown + (lt + th.delta.ln() + zeta).exp();
            let b = match foc_bid(v, &dist, th.alpha, th.beta, shown)? {
                Some(b) if b > top => b,
                _ => {
                    skipped += 1;
                    continue;
                }
            };
            log_theta = lt;
            let s = pp + fl(p.var_v);
            let k = pp / s;
            bm = mp + k * (b - mp);
            bp = (1.0 - k) * pp;
            if !seen.contains(&i) {
                seen.push(i);
            }
            let n_obs = seen.len();
            let sc = kpp + fl(p.var_zeta1);
            let kc = kpp / sc;
            cm = kp + kc * (n_obs as f64 - kp);
            cp = (1.0 - kc) * kpp;
            bids.push(Bid { bidder: i, amount: b });
            board.push(shown);
            counts.push(n_obs);
            trend.push(tr);
            vals.push(v);
        }
        if bids.is_empty() {
            return invalid(format!("auction {j} produced no bids"));
        }
        let trace = AuctionTrace::new(j, j % cfg.clusters, bids, board, counts, trend)?;
        Ok((trace, vals, skipped))
    });
    let mut traces = Vec::with_capacity(cfg.auctions);
    let mut valuations = Vec::with_capacity(cfg.auctions);
    let mut skipped = 0;
    for x in per {
        let (t, v, s) = x?;
        traces.push(t);
        valuations.push(v);
        skipped += s;
    }
    let nj = traces.len();
    let panel = AuctionPanel::with_covariates(traces, vec![vec![1.0]; bidders.len()], vec![vec![1.0]; nj])?;
    Ok(AuctionSim { panel, bidders: bidders.to_vec(), auctions: auctions.to_vec(), valuations, skipped })
}

/// Regret magnitudes of the reference fixture: mean α and β.
pub const REFERENCE_ALPHA: f64 = -1.28;
pub const REFERENCE_BETA: f64 = -1.34;
pub const REFERENCE_DELTA: f64 = 1.22;
pub const REFERENCE_RHO: f64 = 0.27;

/// Recovery fixture truth. Bidders scatter around the reference regret,
/// revelation and learning values (or α = β = 0 when `null`); (1 + α)/(1 + β)
/// is kept positive and away from the singularity. Auction parameters are
/// shared across auctions.
pub fn reference_auction_truth(n_bidders: usize, n_auctions: usize, null: bool, seed: u64) -> (Vec<BidderParams>, Vec<AuctionParams>) {
    let bidders = (0..n_bidders)
        .map(|i| {
            let mut r = rng::stream(seed, &[0xb1, i as u64]);
            let mut z = || r.sample::<f64, _>(StandardNormal);
            let (alpha, beta) = if null {
                (0.0, 0.0)
            } else {
                loop {
                    let a = REFERENCE_ALPHA + 0.1 * z();
                    let b = REFERENCE_BETA + 0.1 * z();
                    if (1.0 + b).abs() > 0.1 && (1.0 + a) / (1.0 + b) > 0.0 {
                        break (a, b);
                    }
                }
            };
            BidderParams { alpha, beta, delta: REFERENCE_DELTA * (0.05 * z()).exp(), rho: REFERENCE_RHO * (0.1 * z()).exp() }
        })
        .collect();
    let auction = AuctionParams {
        tau: 1.0,
        gamma: 1.5,
        iota: 0.2,
        eta: 0.1,
        var_v: 0.05,
        var_w: 4.0,
        var_zeta1: 0.05,
        var_xi1: 0.1,
        var_zeta2: 0.01,
        var_xi2: 0.005,
    };
    (bidders, vec![auction; n_auctions])
}
