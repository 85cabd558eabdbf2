//! The subcommands. Each reads its settings from the merged [`RunConfig`]
//! and writes into the run's output directory.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use strux::auction::{fit_auction, implied_valuations, AuctionFitConfig, AuctionParams, BidderParams, Expectation};
use strux::clustering::{gmm_select, CovMode, Partition};
use strux::counterfactual::{badge_counterfactual, regret_shutdown, BadgeScenario, CounterfactualReport, RegretMode, ReportRow};
use strux::designs::{build_gamification_panel, GamificationConfig, GamificationPanel, GAMIFICATION_COLUMNS};
use strux::diffusion::{ebooks_local, fit_map, DiffusionConfig, JointDiffusionModel};
use strux::dpmix::{run_sampler, significance_summary, DpConfig, HyperBounds, SamplerChains, UnitData};
use strux::optim::MCEMConfig;
use strux::synth::{
    dummy_design, gen_auction, gen_choice_panel, gen_diffusion, gen_gamification, reference_auction_truth, AuctionSimConfig,
    GamificationSimConfig, MixtureTruth,
};

use crate::artifacts::*;
use crate::config::RunConfig;
use crate::error::{validation, CliError, CliResult, Stage};
use crate::io::*;

/// Every key a config file or `--set` may name.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threads",
    "output.dir",
    "input.adoption",
    "input.auction",
    "input.activity",
    "input.badges",
    "input.choice",
    "input.data",
    "input.dir",
    "input.estimates",
    "input.leaderboard",
    "input.segments",
    "simulate.kind",
    "simulate.periods",
    "simulate.noiseless",
    "simulate.state_var",
    "simulate.obs_var",
    "simulate.units",
    "simulate.bidders",
    "simulate.auctions",
    "simulate.null",
    "simulate.users",
    "simulate.days",
    "cluster.k_min",
    "cluster.k_max",
    "cluster.cov",
    "diffusion.max_iterations",
    "diffusion.population",
    "diffusion.generations",
    "dpmix.burn_in",
    "dpmix.draws",
    "dpmix.thin",
    "dpmix.k_trunc",
    "dpmix.init_clusters",
    "dpmix.level",
    "auction.max_iterations",
    "auction.tolerance",
    "auction.sweeps",
    "auction.init_rho",
    "gamification.days",
    "gamification.week_len",
    "gamification.n_trials",
    "counterfactual.scenario",
    "counterfactual.scale",
];

// ---------------------------------------------------------------------------
// simulate

pub fn simulate(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let seed = cfg.seed()?;
    let kind: String = cfg.require("simulate.kind")?;
    match kind.as_str() {
        "diffusion" => run.stage("simulate diffusion", |run| simulate_diffusion(cfg, run, seed)),
        "choice" => run.stage("simulate choice", |run| simulate_choice(cfg, run, seed)),
        "auction" => run.stage("simulate auction", |run| simulate_auction(cfg, run, seed)),
        "gamification" => run.stage("simulate gamification", |run| simulate_gamification(cfg, run, seed)),
        other => validation(format!("simulate.kind: unknown kind '{other}' (diffusion, choice, auction, gamification)")),
    }
}

fn simulate_diffusion(cfg: &RunConfig, run: &mut Run, seed: u64) -> CliResult<()> {
    let t: usize = cfg.get("simulate.periods", 200)?;
    let noiseless: bool = cfg.get("simulate.noiseless", false)?;
    let sv: f64 = cfg.get("simulate.state_var", 1.0)?;
    let ov: f64 = cfg.get("simulate.obs_var", 1.0)?;
    let model = JointDiffusionModel::new(vec![ebooks_local()], (sv, sv), ov);
    let (rows, _) = gen_diffusion(&model, t, seed, noiseless).validating("diffusion simulation")?;
    let recs: Vec<AdoptionRecord> =
        rows.iter().map(|r| AdoptionRecord { category_id: r.category, day: r.t, cumulative_adopters: r.y }).collect();
    write_records(&run.path("adoption.csv"), &ADOPTION_HEADER, &recs)?;
    let truth: Vec<CategoryEstimate> = model.params.iter().enumerate().map(|(j, p)| category_estimate(j, p)).collect();
    write_json(&run.path("truth.json"), &truth)
}

fn simulate_choice(cfg: &RunConfig, run: &mut Run, seed: u64) -> CliResult<()> {
    let units: usize = cfg.get("simulate.units", 200)?;
    let periods: usize = cfg.get("simulate.periods", 50)?;
    let truth = MixtureTruth {
        weights: vec![0.5, 0.5],
        means: vec![DVector::from_column_slice(&[-1.0, 0.5, 1.0]), DVector::from_column_slice(&[1.0, -0.5, -1.0])],
        covs: vec![DMatrix::identity(3, 3) * 0.05, DMatrix::identity(3, 3) * 0.05],
    };
    let (data, t) = gen_choice_panel(&truth, &dummy_design(2, 1), units, periods, seed).validating("choice simulation")?;
    write_choice(&run.path("choice.csv"), &data)?;
    let header: Vec<String> = ["unit_id", "component", "x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = t
        .lambda
        .iter()
        .zip(&t.component)
        .zip(&data)
        .map(|((l, c), u)| {
            let mut r = vec![u.id().to_string(), c.to_string()];
            r.extend(l.iter().map(|v| v.to_string()));
            r
        })
        .collect();
    write_rows(&run.path("truth.csv"), &header, &rows)
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    bidder_id: u64,
    segment: usize,
}

fn simulate_auction(cfg: &RunConfig, run: &mut Run, seed: u64) -> CliResult<()> {
    let nb: usize = cfg.get("simulate.bidders", 300)?;
    let na: usize = cfg.get("simulate.auctions", 40)?;
    let null: bool = cfg.get("simulate.null", false)?;
    if nb == 0 || na == 0 {
        return validation("simulate.bidders and simulate.auctions must be positive");
    }
    let (b, a) = reference_auction_truth(nb, na, null, seed);
    let sim = gen_auction(&b, &a, &AuctionSimConfig { auctions: na, ..Default::default() }, seed).estimating("auction simulation")?;
    write_auction(&run.path("auctions.csv"), &sim.panel)?;
    let segs: Vec<SegmentRecord> = (0..nb).map(|i| SegmentRecord { bidder_id: i as u64, segment: i % 3 }).collect();
    write_records(&run.path("segments.csv"), &["bidder_id", "segment"], &segs)?;
    let truth: Vec<BidderEstimate> = b
        .iter()
        .enumerate()
        .map(|(i, p)| BidderEstimate { bidder_id: i as u64, alpha: p.alpha, beta: p.beta, delta: p.delta, rho: p.rho })
        .collect();
    write_records(&run.path("truth_bidders.csv"), &["bidder_id", "alpha", "beta", "delta", "rho"], &truth)
}

fn simulate_gamification(cfg: &RunConfig, run: &mut Run, seed: u64) -> CliResult<()> {
    let users: usize = cfg.get("simulate.users", 50)?;
    let days: usize = cfg.get("simulate.days", 56)?;
    let lambda: Vec<Vec<f64>> = (0..users)
        .map(|i| {
            let mut l = vec![0.0; 14];
            l[0] = -0.5 + 0.3 * (i % 4) as f64;
            l[1] = 0.5;
            l[10] = 0.4;
            l
        })
        .collect();
    let sim = GamificationSimConfig { days, ..Default::default() };
    let logs = gen_gamification(&lambda, &sim, seed).validating("gamification simulation")?;
    for name in ["activity.csv", "leaderboard.csv", "badges.csv"] {
        run.path(name);
    }
    write_gamification(&run.out, &logs.activities, &logs.leaderboard, &logs.badges)
}

// ---------------------------------------------------------------------------
// cluster

pub fn cluster(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let seed = cfg.seed()?;
    let path = cfg.input("input.data")?;
    let (_, data) = read_matrix(&path)?;
    let k_min: usize = cfg.get("cluster.k_min", 1)?;
    let k_max: usize = cfg.get("cluster.k_max", 6)?;
    if k_min == 0 || k_min > k_max {
        return validation(format!("cluster.k_min {k_min} and cluster.k_max {k_max} must satisfy 1 <= k_min <= k_max"));
    }
    let mode = match cfg.get("cluster.cov", "auto".to_string())?.as_str() {
        "auto" => CovMode::default_for(data[0].len()),
        "full" => CovMode::Full,
        "diagonal" => CovMode::Diagonal,
        other => return validation(format!("cluster.cov: unknown mode '{other}' (auto, full, diagonal)")),
    };
    let ks: Vec<usize> = (k_min..=k_max).collect();
    let sel = run.stage("gmm selection", |_| gmm_select(&data, &ks, mode, seed).estimating("gmm"))?;
    let rows: Vec<Vec<String>> =
        sel.bics.iter().map(|(k, b)| vec![k.to_string(), b.to_string(), u8::from(*k == sel.best_k).to_string()]).collect();
    write_rows(&run.path("selection.csv"), &strings(&["k", "bic", "selected"]), &rows)?;
    let rows: Vec<Vec<String>> =
        sel.best.partition.assignment.iter().enumerate().map(|(i, c)| vec![i.to_string(), c.to_string()]).collect();
    write_rows(&run.path("assignments.csv"), &strings(&["row", "cluster"]), &rows)
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------------------
// fit-diffusion

fn category_estimate(j: usize, p: &strux::diffusion::SegmentedDiffusionParams) -> CategoryEstimate {
    CategoryEstimate {
        category_id: j,
        p_inf: p.p_inf,
        q_inf: p.q_inf,
        p_imm: p.p_imm,
        q_imm: p.q_imm,
        m_inf: p.m_inf,
        m_imm: p.m_imm,
        w: p.w,
        theta: p.theta,
    }
}

pub fn fit_diffusion(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let seed = cfg.seed()?;
    let (ids, y) = read_adoption(&cfg.input("input.adoption")?)?;
    let mut dc = DiffusionConfig { seed, ..Default::default() };
    dc.mcem.max_iterations = cfg.get("diffusion.max_iterations", dc.mcem.max_iterations)?;
    dc.ga.population = cfg.get("diffusion.population", dc.ga.population)?;
    dc.ga.generations = cfg.get("diffusion.generations", dc.ga.generations)?;
    let pop = vec![Vec::new(); y.len()];
    let fit = run.stage("map fit", |_| fit_map(&y, &pop, &dc).estimating("diffusion fit"))?;
    let art = DiffusionFitArtifact {
        categories: fit.model.params.iter().zip(&ids).map(|(p, &id)| category_estimate(id, p)).collect(),
        objective_init: fit.objective_init,
        objective: fit.objective,
        mad: fit.mad,
        mse: fit.mse,
        iterations: fit.trace.len(),
        converged: fit.converged,
    };
    write_json(&run.path("diffusion_estimates.json"), &art)?;
    let mut rows = Vec::new();
    for (j, &id) in ids.iter().enumerate() {
        for (t, (obs, f)) in y[j].iter().zip(&fit.forecasts[j]).enumerate() {
            rows.push(vec![id.to_string(), t.to_string(), obs.to_string(), f.to_string()]);
        }
    }
    write_rows(&run.path("forecasts.csv"), &strings(&["category_id", "day", "observed", "forecast"]), &rows)
}

// ---------------------------------------------------------------------------
// fit-choice / fit-gamification

fn dp_config(cfg: &RunConfig, seed: u64, bounds: HyperBounds) -> CliResult<DpConfig> {
    let d = DpConfig::default();
    Ok(DpConfig {
        burn_in: cfg.get("dpmix.burn_in", d.burn_in)?,
        draws: cfg.get("dpmix.draws", d.draws)?,
        thin: cfg.get("dpmix.thin", d.thin)?,
        k_trunc: cfg.get("dpmix.k_trunc", d.k_trunc)?,
        init_clusters: cfg.get("dpmix.init_clusters", d.init_clusters)?,
        bounds,
        seed,
        ..d
    })
}

fn write_mixture(run: &mut Run, cfg: &RunConfig, model: &str, columns: Vec<String>, units: &[UnitData], chains: &SamplerChains) -> CliResult<()> {
    let level: f64 = cfg.get("dpmix.level", 0.95)?;
    // Too few kept draws for credible intervals leaves the table empty.
    let significance = match significance_summary(chains, level) {
        Ok(s) => columns
            .iter()
            .zip(&s.counts)
            .map(|(c, &(positive, negative, null))| SignificanceCount { coefficient: c.clone(), positive, negative, null })
            .collect(),
        Err(_) if chains.lambda.len() < 100 => Vec::new(),
        Err(e) => return Err(CliError::Estimation(format!("significance: {e}"))),
    };
    let means = chains.posterior_means();
    let n = chains.alpha.len().max(1) as f64;
    let art = MixtureFitArtifact {
        model: model.to_string(),
        columns: columns.clone(),
        units: units
            .iter()
            .enumerate()
            .map(|(i, u)| UnitEstimate { unit_id: u.id(), coefficients: means.row(i).iter().copied().collect() })
            .collect(),
        alpha_mean: chains.alpha.iter().sum::<f64>() / n,
        occupied_mean: chains.istar.iter().sum::<usize>() as f64 / chains.istar.len().max(1) as f64,
        acceptance_mean: chains.acceptance.iter().sum::<f64>() / chains.acceptance.len().max(1) as f64,
        truncation_tail: chains.truncation_tail,
        significance_level: level,
        significance,
    };
    write_json(&run.path("mixture_estimates.json"), &art)?;
    let mut header = strings(&["draw", "alpha"]);
    header.extend(columns.iter().map(|c| format!("mean_{c}")));
    let rows: Vec<Vec<String>> = chains
        .lambda
        .iter()
        .zip(&chains.alpha)
        .enumerate()
        .map(|(s, (l, a))| {
            let mut r = vec![s.to_string(), a.to_string()];
            r.extend(l.column_iter().map(|c| c.mean().to_string()));
            r
        })
        .collect();
    write_rows(&run.path("chains.csv"), &header, &rows)
}

pub fn fit_choice(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let seed = cfg.seed()?;
    let units = read_choice(&cfg.input("input.choice")?)?;
    let dp = dp_config(cfg, seed, HyperBounds::choice())?;
    let chains = run.stage("dp sampler", |_| run_sampler(&units, &dp).estimating("mixed logit sampler"))?;
    let columns = (1..=units[0].dim()).map(|k| format!("x{k}")).collect();
    write_mixture(run, cfg, "choice", columns, &units, &chains)
}

fn gamification_panel(cfg: &RunConfig) -> CliResult<GamificationPanel> {
    let logs = read_gamification(&cfg.input("input.activity")?, &cfg.input("input.leaderboard")?, &cfg.input("input.badges")?)?;
    let last_day = logs.activities.iter().map(|a| a.day).chain(logs.badges.iter().map(|b| b.day)).max();
    let days = match (cfg.raw("gamification.days"), last_day) {
        (Some(_), _) => cfg.require("gamification.days")?,
        (None, Some(d)) => d + 1,
        (None, None) => return validation("gamification.days: required when the logs hold no dated events"),
    };
    let gc = GamificationConfig { days, week_len: cfg.get("gamification.week_len", 7)?, n_trials: cfg.get("gamification.n_trials", 1)? };
    build_gamification_panel(&logs.activities, &logs.leaderboard, &logs.badges, &gc).validating("contribution panel")
}

pub fn fit_gamification(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let seed = cfg.seed()?;
    let panel = run.stage("build panel", |_| gamification_panel(cfg))?;
    let units = panel.to_unit_data(&|_, _| vec![1.0]).validating("contribution units")?;
    if units.is_empty() {
        return validation("no user has contribution rows");
    }
    let dp = dp_config(cfg, seed, HyperBounds::gamification())?;
    let chains = run.stage("dp sampler", |_| run_sampler(&units, &dp).estimating("contribution sampler"))?;
    let columns = strings(&GAMIFICATION_COLUMNS);
    write_mixture(run, cfg, "gamification", columns, &units, &chains)
}

// ---------------------------------------------------------------------------
// fit-auction

fn read_segments(cfg: &RunConfig, bidder_ids: &[u64]) -> CliResult<Partition> {
    if !cfg.contains("input.segments") {
        return Partition::new(vec![0; bidder_ids.len()], 1).validating("segments");
    }
    let recs: Vec<SegmentRecord> = read_records(&cfg.input("input.segments")?)?;
    let map: BTreeMap<u64, usize> = recs.iter().map(|r| (r.bidder_id, r.segment)).collect();
    let labels = bidder_ids
        .iter()
        .map(|b| map.get(b).copied().ok_or_else(|| CliError::Validation(format!("input.segments: no segment for bidder {b}"))))
        .collect::<CliResult<Vec<usize>>>()?;
    let mut sorted = labels.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let dense: BTreeMap<usize, usize> = sorted.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    Partition::new(labels.iter().map(|s| dense[s]).collect(), sorted.len()).validating("segments")
}

pub fn fit_auction_cmd(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let seed = cfg.seed()?;
    let data = read_auction(&cfg.input("input.auction")?)?;
    let segments = read_segments(cfg, &data.bidder_ids)?;
    let mut ac = AuctionFitConfig { seed, ..Default::default() };
    ac.mcem = MCEMConfig {
        max_iterations: cfg.get("auction.max_iterations", 50)?,
        tolerance: cfg.get("auction.tolerance", ac.mcem.tolerance)?,
        monte_carlo_draws: 0,
    };
    ac.sa.sweeps = cfg.get("auction.sweeps", ac.sa.sweeps)?;
    ac.init_rho = cfg.get("auction.init_rho", ac.init_rho)?;
    let est = run.stage("mcem fit", |_| fit_auction(&data.panel, &segments, &data.clusters, &ac).estimating("auction fit"))?;
    let c = est.components;
    let art = AuctionFitArtifact {
        bidders: est
            .bidders
            .iter()
            .zip(&data.bidder_ids)
            .map(|(p, &id)| BidderEstimate { bidder_id: id, alpha: p.alpha, beta: p.beta, delta: p.delta, rho: p.rho })
            .collect(),
        auctions: est.auctions.iter().zip(&data.auction_ids).map(|(p, &id)| auction_estimate(id, p)).collect(),
        log_posterior: PosteriorParts {
            bids: c.bids,
            counts: c.counts,
            valuation: c.valuation,
            auction_prior: c.auction_prior,
            bidder_prior: c.bidder_prior,
            dirac: c.dirac,
            total: c.total,
        },
        initial_log_posterior: est.initial.total,
        posterior_trace: est.posterior_trace.clone(),
        iterations: est.mcem.len(),
        converged: est.converged,
    };
    write_json(&run.path("auction_estimates.json"), &art)?;
    let mut rows = Vec::new();
    for (j, tr) in data.panel.traces.iter().enumerate() {
        for (t, v) in est.valuations[j].iter().enumerate() {
            rows.push(vec![data.auction_ids[j].to_string(), t.to_string(), data.bidder_ids[tr.bids[t].bidder].to_string(), v.to_string()]);
        }
    }
    write_rows(&run.path("valuations.csv"), &strings(&["auction_id", "bid_index", "bidder_id", "valuation"]), &rows)
}

fn auction_estimate(id: u64, p: &AuctionParams) -> AuctionEstimate {
    AuctionEstimate {
        auction_id: id,
        tau: p.tau,
        gamma: p.gamma,
        iota: p.iota,
        eta: p.eta,
        var_v: p.var_v,
        var_w: p.var_w,
        var_zeta1: p.var_zeta1,
        var_xi1: p.var_xi1,
        var_zeta2: p.var_zeta2,
        var_xi2: p.var_xi2,
    }
}

// ---------------------------------------------------------------------------
// counterfactual

pub fn counterfactual(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let scenario: String = cfg.require("counterfactual.scenario")?;
    let (report, flagged) = match scenario.as_str() {
        "regret-winner" => regret(cfg, run, RegretMode::Winner)?,
        "regret-both" => regret(cfg, run, RegretMode::Both)?,
        "badge-scale" => badges(cfg, run, BadgeScenario::Scale(cfg.require("counterfactual.scale")?))?,
        "badge-shutdown-silver-bronze" => badges(cfg, run, BadgeScenario::ShutdownSilverBronze)?,
        "badge-shutdown-gold" => badges(cfg, run, BadgeScenario::ShutdownGold)?,
        "badge-shutdown-all" => badges(cfg, run, BadgeScenario::ShutdownAll)?,
        other => {
            return validation(format!(
                "counterfactual.scenario: unknown scenario '{other}' (regret-winner, regret-both, badge-scale, \
                 badge-shutdown-silver-bronze, badge-shutdown-gold, badge-shutdown-all)"
            ))
        }
    };
    let art = CounterfactualArtifact {
        scenario,
        baseline: report.baseline,
        scenario_total: report.scenario,
        abs_delta: report.abs_delta,
        rel_delta: report.rel_delta,
        flagged,
    };
    write_json(&run.path("counterfactual.json"), &art)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.label.clone(), r.baseline.to_string(), r.scenario.to_string(), r.delta.to_string()])
        .collect();
    write_rows(&run.path("counterfactual_rows.csv"), &strings(&["label", "baseline", "scenario", "delta"]), &rows)
}

fn regret(cfg: &RunConfig, run: &mut Run, mode: RegretMode) -> CliResult<(CounterfactualReport, Vec<u64>)> {
    let data = read_auction(&cfg.input("input.auction")?)?;
    let est: AuctionFitArtifact = read_json(&cfg.input("input.estimates")?)?;
    let by_bidder: BTreeMap<u64, &BidderEstimate> = est.bidders.iter().map(|b| (b.bidder_id, b)).collect();
    let by_auction: BTreeMap<u64, &AuctionEstimate> = est.auctions.iter().map(|a| (a.auction_id, a)).collect();
    let bidders = data
        .bidder_ids
        .iter()
        .map(|id| {
            by_bidder
                .get(id)
                .map(|b| BidderParams { alpha: b.alpha, beta: b.beta, delta: b.delta, rho: b.rho })
                .ok_or_else(|| CliError::Validation(format!("input.estimates: no estimate for bidder {id}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let auctions = data
        .auction_ids
        .iter()
        .map(|id| {
            by_auction
                .get(id)
                .map(|a| AuctionParams {
                    tau: a.tau,
                    gamma: a.gamma,
                    iota: a.iota,
                    eta: a.eta,
                    var_v: a.var_v,
                    var_w: a.var_w,
                    var_zeta1: a.var_zeta1,
                    var_xi1: a.var_xi1,
                    var_zeta2: a.var_zeta2,
                    var_xi2: a.var_xi2,
                })
                .ok_or_else(|| CliError::Validation(format!("input.estimates: no estimate for auction {id}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    run.stage("regret shutdown", |_| {
        let vals = implied_valuations(&data.panel, &bidders, &auctions, Expectation::GaussHermite).estimating("valuations")?;
        let res = regret_shutdown(&data.panel, &bidders, &auctions, &vals, mode).estimating("regret shutdown")?;
        let flagged = res.flagged.iter().map(|&j| data.auction_ids[j]).collect();
        // Report rows follow the unflagged auctions in panel order.
        let kept = (0..data.auction_ids.len()).filter(|j| !res.flagged.contains(j));
        let rows = res
            .report
            .rows
            .iter()
            .zip(kept)
            .map(|(r, j)| ReportRow { label: format!("auction {}", data.auction_ids[j]), ..r.clone() })
            .collect();
        Ok((CounterfactualReport::from_rows(rows), flagged))
    })
}

fn badges(cfg: &RunConfig, run: &mut Run, scenario: BadgeScenario) -> CliResult<(CounterfactualReport, Vec<u64>)> {
    let panel = gamification_panel(cfg)?;
    let est: MixtureFitArtifact = read_json(&cfg.input("input.estimates")?)?;
    if est.model != "gamification" || est.columns.len() != GAMIFICATION_COLUMNS.len() {
        return validation(format!("input.estimates: expected contribution-model estimates, found model '{}'", est.model));
    }
    let by_user: BTreeMap<usize, &Vec<f64>> = est.units.iter().map(|u| (u.unit_id, &u.coefficients)).collect();
    let coefs = panel
        .users
        .iter()
        .map(|&u| match by_user.get(&u) {
            Some(c) => Ok((*c).clone()),
            None if panel.user_rows(u).is_empty() => Ok(vec![0.0; 14]),
            None => validation(format!("input.estimates: no coefficients for user {u}")),
        })
        .collect::<CliResult<Vec<_>>>()?;
    run.stage("badge counterfactual", |_| {
        let r = badge_counterfactual(&panel, &coefs, scenario).estimating("badge counterfactual")?;
        Ok((r, Vec::new()))
    })
}
