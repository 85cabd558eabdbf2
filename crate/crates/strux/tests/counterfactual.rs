use strux::auction::BidderParams;
use strux::counterfactual::*;
use strux::designs::{AppChoiceRow, AppPanel, GamificationPanel, GamificationRow, InfluenceSource};
use strux::optim::GAConfig;
use strux::stats::expit;
use strux::synth::{gen_auction, reference_auction_truth, AuctionSimConfig};

fn app_panel() -> AppPanel {
    let mut rows = Vec::new();
    for unit in 0..3 {
        let mut s = 0;
        for week in 1..=4 {
            let chosen = (unit + week) % 3;
            let c = vec![0.1 * week as f64 + 0.05 * unit as f64, 0.3 - 0.02 * week as f64];
            rows.push(AppChoiceRow { unit, week, chosen, s, influence: Some(c), factors: vec![0.2 * unit as f64], tenure: week as f64 });
            if chosen > 0 {
                s += 1;
            }
        }
    }
    AppPanel { categories: 2, weeks: 4, source: InfluenceSource::GlobalAdopters, rows }
}

/// [e1, e2, s, c, F]
fn choice_fit(lambda_c: f64) -> ChoiceFit {
    let coefs = (0..3).map(|u| vec![-0.5 + 0.1 * u as f64, 0.2, -0.3, lambda_c, 0.4]).collect();
    ChoiceFit::new(app_panel(), coefs).unwrap()
}

/// Expected adoptions computed row by row with the softmax written out.
fn brute_adoptions(fit: &ChoiceFit, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; 2];
    for r in &fit.panel.rows {
        let l = &fit.coefficients[r.unit];
        let c = r.influence.as_ref().unwrap();
        let v: Vec<f64> = (0..2)
            .map(|j| l[j] + l[2] * r.s as f64 + scale * l[3] * c[j] + l[4] * r.factors[0])
            .collect();
        let den = 1.0 + v.iter().map(|x| x.exp()).sum::<f64>();
        for j in 0..2 {
            out[j] += v[j].exp() / den;
        }
    }
    out
}

fn quick_ga(seed: u64) -> GAConfig {
    GAConfig { population: 30, generations: 40, seed, ..Default::default() }
}

#[test]
fn report_totals_are_row_sums() {
    let rows = vec![
        ReportRow { label: "a".into(), baseline: 1.5, scenario: 2.0, delta: 0.5 },
        ReportRow { label: "b".into(), baseline: -1.5, scenario: 0.25, delta: 1.75 },
    ];
    let r = CounterfactualReport::from_rows(rows);
    assert_eq!(r.baseline, 0.0);
    assert_eq!(r.rel_delta, None);
    assert!((r.abs_delta - 2.25).abs() < 1e-15);
}

#[test]
fn choice_panel_without_influence_is_rejected() {
    let mut p = app_panel();
    p.source = InfluenceSource::None;
    assert!(ChoiceFit::new(p, vec![vec![0.0; 4]; 3]).is_err());
    assert!(ChoiceFit::new(app_panel(), vec![vec![0.0; 3]; 3]).is_err());
}

#[test]
fn unit_factor_changes_nothing() {
    let r = perturb_social_influence(&choice_fit(0.8), 1.0).unwrap();
    assert_eq!(r.abs_delta, 0.0);
    assert!(r.rows.iter().all(|x| x.delta == 0.0));
}

#[test]
fn scaled_influence_matches_brute_force() {
    let fit = choice_fit(0.8);
    let r = perturb_social_influence(&fit, 2.5).unwrap();
    let base = brute_adoptions(&fit, 1.0);
    let scen = brute_adoptions(&fit, 2.5);
    for j in 0..2 {
        assert!((r.rows[j].baseline - base[j]).abs() < 1e-10);
        assert!((r.rows[j].scenario - scen[j]).abs() < 1e-10);
    }
    let sum: f64 = r.rows.iter().map(|x| x.scenario).sum();
    assert!((r.scenario - sum).abs() < 1e-10);
    assert!(r.abs_delta > 0.0);
}

#[test]
fn decoded_paths_are_monotone_and_bounded() {
    let u = [0.3, -2.0, 1.0, 5.0, -1.0, 0.2, -7.0, 0.0];
    let p = decode_policy(&u, 2, 4, 0.1, 0.9);
    assert!(p.is_monotone());
    assert!(p.path.iter().flatten().all(|&c| (0.1..=0.9).contains(&c)));
    assert_eq!(p.path[0][3], 0.9);
}

#[test]
fn inert_influence_gives_zero_policy_gain() {
    let (policy, r) = optimal_social_influence(&choice_fit(0.0), 3, (0.0, 1.0), &quick_ga(1)).unwrap();
    assert!(policy.is_monotone());
    assert_eq!(r.abs_delta, 0.0);
}

#[test]
fn positive_influence_pushes_the_path_to_the_cap() {
    let fit = choice_fit(1.2);
    let (policy, r) = optimal_social_influence(&fit, 4, (0.0, 1.0), &quick_ga(2)).unwrap();
    assert!(policy.is_monotone());
    assert!(policy.path.iter().flatten().all(|&c| c > 1.0 - 1e-6), "{:?}", policy.path);
    assert!(r.scenario >= r.baseline);
}

#[test]
fn negative_influence_pushes_the_path_to_the_floor() {
    let fit = choice_fit(-1.2);
    let (policy, r) = optimal_social_influence(&fit, 4, (0.0, 1.0), &quick_ga(3)).unwrap();
    assert!(policy.path.iter().flatten().all(|&c| c < 1e-6), "{:?}", policy.path);
    assert!(r.scenario >= r.baseline);
}

#[test]
fn policy_search_is_deterministic_and_checks_inputs() {
    let fit = choice_fit(0.7);
    let a = optimal_social_influence(&fit, 2, (0.0, 1.0), &quick_ga(5)).unwrap();
    let b = optimal_social_influence(&fit, 2, (0.0, 1.0), &quick_ga(5)).unwrap();
    assert_eq!(a, b);
    assert!(optimal_social_influence(&fit, 0, (0.0, 1.0), &quick_ga(5)).is_err());
    assert!(optimal_social_influence(&fit, 9, (0.0, 1.0), &quick_ga(5)).is_err());
    assert!(optimal_social_influence(&fit, 2, (1.0, 0.0), &quick_ga(5)).is_err());
}

fn sim_with(alpha: f64, beta: f64, seed: u64) -> strux::synth::AuctionSim {
    let (mut b, a) = reference_auction_truth(40, 8, true, seed);
    for x in &mut b {
        x.alpha = alpha;
        x.beta = beta;
    }
    gen_auction(&b, &a, &AuctionSimConfig { auctions: 8, ..Default::default() }, seed).unwrap()
}

#[test]
fn shutdown_without_regret_changes_nothing() {
    let sim = sim_with(0.0, 0.0, 1);
    for mode in [RegretMode::Winner, RegretMode::Both] {
        let r = regret_shutdown(&sim.panel, &sim.bidders, &sim.auctions, &sim.valuations, mode).unwrap();
        assert_eq!(r.report.abs_delta, 0.0);
        assert!(r.report.rows.iter().all(|x| x.delta == 0.0));
        assert!(r.flagged.is_empty());
        let sum: f64 = r.report.rows.iter().map(|x| x.baseline).sum();
        assert!((r.report.baseline - sum).abs() < 1e-10);
    }
}

#[test]
fn baseline_replays_the_recorded_bids() {
    // The generator's bids are the baseline simulation's bids when nothing
    // was skipped and valuations are the true ones.
    let sim = sim_with(0.3, 0.2, 2);
    let r = regret_shutdown(&sim.panel, &sim.bidders, &sim.auctions, &sim.valuations, RegretMode::Winner).unwrap();
    for (tr, path) in sim.panel.traces.iter().zip(&r.baseline_paths) {
        for (b, s) in tr.bids.iter().zip(&path.bids) {
            let s = s.expect("valuation above the board");
            assert!((b.amount - s).abs() < 1e-8 * b.amount, "{} vs {s}", b.amount);
        }
    }
}

#[test]
fn removing_winner_regret_raises_winning_bids() {
    let sim = sim_with(0.6, 0.0, 3);
    let r = regret_shutdown(&sim.panel, &sim.bidders, &sim.auctions, &sim.valuations, RegretMode::Winner).unwrap();
    let up = r.report.rows.iter().filter(|x| x.delta > 0.0).count();
    assert!(up * 10 >= r.report.rows.len() * 9, "{up} of {}", r.report.rows.len());
    assert!(r.report.abs_delta > 0.0);
}

#[test]
fn singular_bidder_flags_the_auction() {
    let sim = sim_with(0.2, 0.1, 4);
    let mut b = sim.bidders.clone();
    let who = sim.panel.traces[2].bids[0].bidder;
    b[who] = BidderParams { beta: -1.0, ..b[who] };
    let r = regret_shutdown(&sim.panel, &b, &sim.auctions, &sim.valuations, RegretMode::Winner).unwrap();
    assert_eq!(r.flagged, vec![2]);
    assert_eq!(r.report.rows.len(), sim.panel.traces.len() - 1);
}

#[test]
fn simulated_path_uses_the_board_as_floor() {
    let sim = sim_with(0.0, 0.0, 6);
    let tr = &sim.panel.traces[0];
    let low = vec![1.0; tr.len()];
    let p = simulate_bid_path(tr, &sim.auctions[0], &|_| (0.0, 0.0), &low).unwrap();
    assert!(p.bids.iter().all(|b| b.is_none()));
    assert_eq!(p.winning_bid, tr.board[0]);
}

fn gam_panel() -> GamificationPanel {
    let mut rows = Vec::new();
    for (k, user) in [3usize, 7, 9].into_iter().enumerate() {
        for day in 1..=5 {
            let d = day as u32;
            rows.push(GamificationRow {
                user,
                day,
                week: (day - 1) / 7 + 1,
                contributions: (d + k as u32) % 4,
                cont_prev: d * 2,
                rcv_prev: d,
                crep: 10.0 * day as f64,
                rep: 5.0,
                rnk: if day > 2 { 3.0 } else { 0.0 },
                drnk: 0.0,
                offboard: day <= 2,
                bdg: [u32::from(day == 3), u32::from(day % 2 == 0), 1],
                cbdg: [u32::from(day > 3), d / 2, d],
            });
        }
    }
    GamificationPanel { users: vec![3, 7, 9], rows, n_trials: 6, cont_mean: 4.0 }
}

fn gam_coefs() -> Vec<Vec<f64>> {
    (0..3)
        .map(|k| {
            let mut c = vec![-1.0 + 0.1 * k as f64, 0.5, 0.2, 0.1, 0.3, -0.2, 0.05, -0.4];
            c.extend([0.6, 0.4, 0.2, 0.3, 0.2, 0.1]);
            c
        })
        .collect()
}

#[test]
fn identity_badge_scale_changes_nothing() {
    let r = badge_counterfactual(&gam_panel(), &gam_coefs(), BadgeScenario::Scale(1.0)).unwrap();
    assert_eq!(r.abs_delta, 0.0);
    assert_eq!(r.rows.len(), 3);
}

#[test]
fn badge_totals_match_brute_force() {
    let panel = gam_panel();
    let coefs = gam_coefs();
    let r = badge_counterfactual(&panel, &coefs, BadgeScenario::ShutdownSilverBronze).unwrap();
    let mut base = 0.0;
    let mut scen = 0.0;
    for row in &panel.rows {
        let k = panel.users.iter().position(|&u| u == row.user).unwrap();
        let mut x = panel.design(row);
        let eta: f64 = x.iter().zip(&coefs[k]).map(|(a, b)| a * b).sum();
        base += 6.0 * expit(eta);
        for c in [9, 10, 12, 13] {
            x[c] = 0.0;
        }
        let eta: f64 = x.iter().zip(&coefs[k]).map(|(a, b)| a * b).sum();
        scen += 6.0 * expit(eta);
    }
    assert!((r.baseline - base).abs() < 1e-10);
    assert!((r.scenario - scen).abs() < 1e-10);
    let sum: f64 = r.rows.iter().map(|x| x.scenario).sum();
    assert!((r.scenario - sum).abs() < 1e-10);
}

#[test]
fn removing_rewarding_badges_lowers_contributions() {
    let panel = gam_panel();
    let coefs = gam_coefs();
    for s in [BadgeScenario::ShutdownAll, BadgeScenario::ShutdownGold, BadgeScenario::ShutdownSilverBronze, BadgeScenario::Scale(0.5)] {
        let r = badge_counterfactual(&panel, &coefs, s).unwrap();
        assert!(r.abs_delta < 0.0, "{s:?}");
    }
    let up = badge_counterfactual(&panel, &coefs, BadgeScenario::Scale(2.0)).unwrap();
    assert!(up.abs_delta > 0.0);
}

#[test]
fn badge_inputs_are_checked() {
    let panel = gam_panel();
    assert!(badge_counterfactual(&panel, &gam_coefs()[..2], BadgeScenario::ShutdownAll).is_err());
    assert!(badge_counterfactual(&panel, &gam_coefs(), BadgeScenario::Scale(f64::NAN)).is_err());
}
