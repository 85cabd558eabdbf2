//! Policy simulators: social-influence paths for the choice model, regret
//! shutdown for the auction model and badge perturbations for the
//! contribution model. Every scenario is scored against a baseline computed
//! through the same code path, so identity scenarios give exactly zero deltas.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::auction::{count_line, optimal_bid, AuctionEstimates, AuctionPanel, AuctionParams, AuctionTrace, BidderParams, MaxBidBelief, NormalMaxBid, VAR_FLOOR};
use crate::designs::{AppChoiceRow, AppPanel, GamificationPanel, InfluenceSource};
use crate::dpmix::logit_probs;
use crate::error::{invalid, Error, Result};
use crate::optim::{genetic_optimize, GAConfig};
use crate::par;
use crate::rng;
use crate::stats::expit;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub baseline: f64,
    pub scenario: f64,
    pub delta: f64,
}

/// Baseline and scenario totals with their breakdown. Totals are the
/// in-order sums of the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualReport {
    pub baseline: f64,
    pub scenario: f64,
    pub abs_delta: f64,
    /// (scenario − baseline)/baseline; `None` when the baseline is zero.
    pub rel_delta: Option<f64>,
    pub rows: Vec<ReportRow>,
}

impl CounterfactualReport {
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let baseline: f64 = rows.iter().map(|r| r.baseline).sum();
        let scenario: f64 = rows.iter().map(|r| r.scenario).sum();
        let abs_delta = scenario - baseline;
        let rel_delta = if baseline != 0.0 { Some(abs_delta / baseline) } else { None };
        Self { baseline, scenario, abs_delta, rel_delta, rows }
    }

    fn from_pairs(labels: impl Iterator<Item = String>, base: &[f64], scen: &[f64]) -> Self {
        let rows = labels
            .zip(base.iter().zip(scen))
            .map(|(label, (&b, &s))| ReportRow { label, baseline: b, scenario: s, delta: s - b })
            .collect();
        Self::from_rows(rows)
    }
}

// ---------------------------------------------------------------------------
// Social influence

/// Choice panel plus one coefficient vector per unit id.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceFit {
    pub panel: AppPanel,
    /// Indexed by unit id; layout as [`AppChoiceRow::design`].
    pub coefficients: Vec<Vec<f64>>,
}

impl ChoiceFit {
    pub fn new(panel: AppPanel, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        if panel.source == InfluenceSource::None {
            return invalid("the choice panel has no social-influence covariate");
        }
        let d = panel.design_dim();
        if panel.rows.iter().any(|r| r.unit >= coefficients.len()) {
            return invalid("a unit in the panel has no coefficients");
        }
        if coefficients.iter().any(|c| c.len() != d) {
            return Err(Error::Dimension(format!("coefficients must have length {d}")));
        }
        Ok(Self { panel, coefficients })
    }

    /// Position of the influence coefficient.
    pub fn influence_index(&self) -> usize {
        self.panel.categories + 1
    }
}

/// Non-decreasing influence path per category; `path[j][t]` applies to
/// week t + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluencePolicy {
    pub path: Vec<Vec<f64>>,
}

impl InfluencePolicy {
    pub fn is_monotone(&self) -> bool {
        self.path.iter().all(|p| p.windows(2).all(|w| w[0] <= w[1]))
    }
}

fn row_adoption(row: &AppChoiceRow, lambda: &[f64], j_total: usize, k: usize, scale: f64, policy: Option<&InfluencePolicy>, out: &mut [f64]) {
    let v: Vec<f64> = (1..=j_total)
        .map(|j| {
            let mut x = row.design(j, j_total);
            if let Some(p) = policy {
                if let Some(c) = p.path[j - 1].get(row.week - 1) {
                    x[k] = *c;
                }
            }
            x.iter().zip(lambda).enumerate().map(|(m, (a, b))| if m == k { a * (b * scale) } else { a * b }).sum()
        })
        .collect();
    let p = logit_probs(&v);
    for j in 0..j_total {
        out[j] += p[j + 1];
    }
}

/// Expected adoptions per category: Σ over units and weeks of the inside
/// choice probabilities, with the influence coefficient scaled by `scale`
/// and the influence signal replaced by `policy` where it is defined.
pub fn expected_adoptions(fit: &ChoiceFit, scale: f64, policy: Option<&InfluencePolicy>) -> Vec<f64> {
    let jt = fit.panel.categories;
    let k = fit.influence_index();
    let mut units: Vec<usize> = fit.panel.rows.iter().map(|r| r.unit).collect();
    units.dedup();
    let per: Vec<Vec<f64>> = par::map_slice(&units, |_, &u| {
        let mut acc = vec![0.0; jt];
        for row in fit.panel.unit_rows(u) {
            row_adoption(row, &fit.coefficients[u], jt, k, scale, policy, &mut acc);
        }
        acc
    });
    let mut tot = vec![0.0; jt];
    for a in &per {
        for j in 0..jt {
            tot[j] += a[j];
        }
    }
    tot
}

fn category_labels(n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(|j| format!("category {j}"))
}

/// Expected adoptions with the influence coefficient multiplied by `factor`.
pub fn perturb_social_influence(fit: &ChoiceFit, factor: f64) -> Result<CounterfactualReport> {
    if !factor.is_finite() {
        return invalid("factor must be finite");
    }
    let base = expected_adoptions(fit, 1.0, None);
    let scen = expected_adoptions(fit, factor, None);
    Ok(CounterfactualReport::from_pairs(category_labels(fit.panel.categories), &base, &scen))
}

/// c_0 = lo + (hi − lo)·expit(u_0), c_t = min(hi, c_{t−1} + exp(u_t)).
pub fn decode_policy(u: &[f64], categories: usize, horizon: usize, lo: f64, hi: f64) -> InfluencePolicy {
    let path = (0..categories)
        .map(|j| {
            let uj = &u[j * horizon..(j + 1) * horizon];
            let mut c = Vec::with_capacity(horizon);
            let mut prev = lo + (hi - lo) * expit(uj[0]);
            c.push(prev);
            for &x in &uj[1..] {
                prev = (prev + x.exp()).min(hi);
                c.push(prev);
            }
            c
        })
        .collect();
    InfluencePolicy { path }
}

/// Observed influence signal per category and week, as a path.
pub fn observed_policy(panel: &AppPanel, horizon: usize) -> InfluencePolicy {
    let mut path = vec![vec![0.0; horizon]; panel.categories];
    let mut seen = vec![vec![false; horizon]; panel.categories];
    for r in &panel.rows {
        if let Some(c) = &r.influence {
            if r.week >= 1 && r.week <= horizon {
                for j in 0..panel.categories {
                    if !seen[j][r.week - 1] {
                        path[j][r.week - 1] = c[j];
                        seen[j][r.week - 1] = true;
                    }
                }
            }
        }
    }
    InfluencePolicy { path }
}

fn encode_policy(p: &InfluencePolicy, lo: f64, hi: f64) -> Vec<f64> {
    let tiny = 1e-9 * (1.0 + (hi - lo).abs());
    let mut u = Vec::new();
    for path in &p.path {
        let c0 = path[0].clamp(lo, hi);
        let f = if hi > lo { ((c0 - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9) } else { 0.5 };
        u.push((f / (1.0 - f)).ln());
        let mut prev = c0;
        for &c in &path[1..] {
            let inc = (c.clamp(lo, hi) - prev).max(tiny);
            u.push(inc.ln());
            prev = (prev + inc).min(hi);
        }
    }
    u
}

/// Monotone influence path over the first `horizon` weeks that maximizes
/// total expected adoptions, by genetic search over the increment
/// parameterization of [`decode_policy`]. The population is seeded with the
/// observed path (made monotone), the lower path and the upper path.
pub fn optimal_social_influence(fit: &ChoiceFit, horizon: usize, bounds: (f64, f64), ga: &GAConfig) -> Result<(InfluencePolicy, CounterfactualReport)> {
    let (lo, hi) = bounds;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return invalid(format!("infeasible bounds [{lo}, {hi}]"));
    }
    if horizon == 0 || horizon > fit.panel.weeks {
        return invalid(format!("horizon must lie in 1..={}", fit.panel.weeks));
    }
    let jt = fit.panel.categories;
    let dim = jt * horizon;
    let obj = |u: &[f64]| -> f64 {
        let p = decode_policy(u, jt, horizon, lo, hi);
        expected_adoptions(fit, 1.0, Some(&p)).iter().sum()
    };
    let observed = observed_policy(&fit.panel, horizon);
    let mut seeds = vec![encode_policy(&observed, lo, hi), vec![30.0; dim], vec![-30.0; dim]];
    let mut r = rng::stream(ga.seed, &[0x1f]);
    while seeds.len() < ga.population.min(8) {
        seeds.push((0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect());
    }
    let res = genetic_optimize(&obj, &seeds, ga)?;
    let policy = decode_policy(&res.x, jt, horizon, lo, hi);
    let base = expected_adoptions(fit, 1.0, None);
    let scen = expected_adoptions(fit, 1.0, Some(&policy));
    Ok((policy, CounterfactualReport::from_pairs(category_labels(jt), &base, &scen)))
}

// ---------------------------------------------------------------------------
// Regret shutdown

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegretMode {
    /// α set to zero.
    Winner,
    /// α and β set to zero.
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedAuction {
    /// Simulated bid at each original epoch; `None` when the valuation does
    /// not exceed the board.
    pub bids: Vec<Option<f64>>,
    pub winning_bid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShutdownResult {
    pub report: CounterfactualReport,
    pub baseline_paths: Vec<SimulatedAuction>,
    pub scenario_paths: Vec<SimulatedAuction>,
    /// Auctions left out of the report because some bidder's 1 + β vanishes.
    pub flagged: Vec<usize>,
}

/// Re-run one auction's bid epochs. Each bidder bids [`optimal_bid`] at the
/// held-fixed valuation against the latent-bid belief filtered on the
/// simulated bids so far; the bidder-count belief uses the observed counts.
pub fn simulate_bid_path(trace: &AuctionTrace, p: &AuctionParams, regret: &dyn Fn(usize) -> (f64, f64), valuations: &[f64]) -> Result<SimulatedAuction> {
    if valuations.len() != trace.len() {
        return Err(Error::Dimension(format!("auction {}: one valuation per bid required", trace.id)));
    }
    let fl = |v: f64| v.max(VAR_FLOOR);
    let (cs, _) = count_line(trace, p);
    let floor = trace.board[0];
    let (mut m, mut pv) = (floor, fl(p.var_w));
    let mut bids: Vec<Option<f64>> = Vec::with_capacity(trace.len());
    for t in 0..trace.len() {
        let me = trace.bids[t].bidder;
        let mp = p.tau * m + p.gamma;
        let pp = p.tau * p.tau * pv + fl(p.var_w);
        let n = MaxBidBelief::from_count(mp, pp, cs[t].pred_mean).n;
        let dist = NormalMaxBid { mean: mp, sd: pp.sqrt(), n };
        let shown = (0..t).filter(|&s| trace.bids[s].bidder != me).filter_map(|s| bids[s]).fold(floor, f64::max);
        let v = valuations[t];
        if !(v > shown) {
            bids.push(None);
            continue;
        }
        let (a, b) = regret(me);
        let bid = optimal_bid(v, &dist, a, b, shown)?;
        let s = pp + fl(p.var_v);
        let k = pp / s;
        m = mp + k * (bid - mp);
        pv = (1.0 - k) * pp;
        bids.push(Some(bid));
    }
    let winning_bid = bids.iter().flatten().fold(floor, |a, &b| a.max(b));
    Ok(SimulatedAuction { bids, winning_bid })
}

/// Winning bids with regret switched off, against a baseline simulated with
/// the fitted regret. Valuations stay at their baseline values.
pub fn regret_shutdown(
    panel: &AuctionPanel,
    bidders: &[BidderParams],
    auctions: &[AuctionParams],
    valuations: &[Vec<f64>],
    mode: RegretMode,
) -> Result<ShutdownResult> {
    if bidders.len() != panel.n_bidders || auctions.len() != panel.traces.len() || valuations.len() != panel.traces.len() {
        return Err(Error::Dimension("parameters and valuations must match the panel".into()));
    }
    let runs: Vec<Result<Option<(SimulatedAuction, SimulatedAuction)>>> = par::map_slice(&panel.traces, |j, tr| {
        let base_fn = |i: usize| (bidders[i].alpha, bidders[i].beta);
        let scen_fn = |i: usize| match mode {
            RegretMode::Winner => (0.0, bidders[i].beta),
            RegretMode::Both => (0.0, 0.0),
        };
        let base = simulate_bid_path(tr, &auctions[j], &base_fn, &valuations[j]);
        let scen = simulate_bid_path(tr, &auctions[j], &scen_fn, &valuations[j]);
        match (base, scen) {
            (Ok(b), Ok(s)) => Ok(Some((b, s))),
            (Err(Error::LoserRegretSingularity(_)), _) | (_, Err(Error::LoserRegretSingularity(_))) => Ok(None),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    });
    let mut flagged = Vec::new();
    let mut base_paths = Vec::new();
    let mut scen_paths = Vec::new();
    let mut labels = Vec::new();
    for (j, r) in runs.into_iter().enumerate() {
        match r? {
            Some((b, s)) => {
                labels.push(format!("auction {}", panel.traces[j].id));
                base_paths.push(b);
                scen_paths.push(s);
            }
            None => flagged.push(j),
        }
    }
    let bw: Vec<f64> = base_paths.iter().map(|p| p.winning_bid).collect();
    let sw: Vec<f64> = scen_paths.iter().map(|p| p.winning_bid).collect();
    let report = CounterfactualReport::from_pairs(labels.into_iter(), &bw, &sw);
    Ok(ShutdownResult { report, baseline_paths: base_paths, scenario_paths: scen_paths, flagged })
}

/// [`regret_shutdown`] at fitted estimates and their implied valuations.
pub fn regret_shutdown_fit(panel: &AuctionPanel, est: &AuctionEstimates, mode: RegretMode) -> Result<ShutdownResult> {
    regret_shutdown(panel, &est.bidders, &est.auctions, &est.valuations, mode)
}

// ---------------------------------------------------------------------------
// Badges

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BadgeScenario {
    /// Multiply every badge column by the factor.
    Scale(f64),
    ShutdownSilverBronze,
    ShutdownGold,
    ShutdownAll,
}

/// Badge columns in the contribution design: daily then cumulative,
/// each (gold, silver, bronze).
const BADGE_COLS: [usize; 6] = [8, 9, 10, 11, 12, 13];

impl BadgeScenario {
    pub fn apply(&self, x: &mut [f64; 14]) {
        match *self {
            BadgeScenario::Scale(f) => {
                for c in BADGE_COLS {
                    x[c] *= f;
                }
            }
            BadgeScenario::ShutdownSilverBronze => {
                for c in [9, 10, 12, 13] {
                    x[c] = 0.0;
                }
            }
            BadgeScenario::ShutdownGold => {
                x[8] = 0.0;
                x[11] = 0.0;
            }
            BadgeScenario::ShutdownAll => {
                for c in BADGE_COLS {
                    x[c] = 0.0;
                }
            }
        }
    }
}

/// Expected contributions per user: Σ over days of trials·expit(x'λ).
/// `coefficients` is indexed like `panel.users`.
pub fn expected_contributions(panel: &GamificationPanel, coefficients: &[Vec<f64>], scenario: Option<BadgeScenario>) -> Result<Vec<f64>> {
    if coefficients.len() != panel.users.len() {
        return Err(Error::Dimension("one coefficient vector per panel user required".into()));
    }
    if coefficients.iter().any(|c| c.len() != 14) {
        return Err(Error::Dimension("contribution coefficients have 14 entries".into()));
    }
    let pos: BTreeMap<usize, usize> = panel.users.iter().enumerate().map(|(k, &u)| (u, k)).collect();
    let n = f64::from(panel.n_trials);
    let per: Vec<f64> = par::map_slice(&panel.users, |k, &u| {
        panel
            .user_rows(u)
            .iter()
            .map(|row| {
                let mut x = panel.design(row);
                if let Some(s) = scenario {
                    s.apply(&mut x);
                }
                let eta: f64 = x.iter().zip(&coefficients[k]).map(|(a, b)| a * b).sum();
                n * expit(eta)
            })
            .sum()
    });
    if panel.rows.iter().any(|r| !pos.contains_key(&r.user)) {
        return invalid("panel row for a user outside the user list");
    }
    Ok(per)
}

pub fn badge_counterfactual(panel: &GamificationPanel, coefficients: &[Vec<f64>], scenario: BadgeScenario) -> Result<CounterfactualReport> {
    if let BadgeScenario::Scale(f) = scenario {
        if !f.is_finite() {
            return invalid("scale factor must be finite");
        }
    }
    let base = expected_contributions(panel, coefficients, None)?;
    let scen = expected_contributions(panel, coefficients, Some(scenario))?;
    let labels = panel.users.iter().map(|u| format!("user {u}"));
    Ok(CounterfactualReport::from_pairs(labels, &base, &scen))
}
