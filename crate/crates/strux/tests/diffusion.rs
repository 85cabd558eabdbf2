use nalgebra::DMatrix;
use strux::diffusion::*;
use strux::kalman::UkfParams;
use strux::optim::{GAConfig, MCEMConfig};

fn ebooks_model(state: (f64, f64), obs: f64) -> JointDiffusionModel {
    JointDiffusionModel::new(vec![ebooks_local()], state, obs)
}

#[test]
fn pure_exponential_approach() {
    let p = SegmentedDiffusionParams { p_inf: 0.1, q_inf: 0.0, p_imm: 0.2, q_imm: 0.1, m_inf: 50.0, m_imm: 80.0, w: 0.3, theta: 1.0 - 1e-12 };
    let mut m = JointDiffusionModel::new(vec![p], (0.0, 0.0), 1.0);
    m.params[0].theta = 0.999_999;
    let sim = simulate_diffusion(&m, 30, 0, true).unwrap();
    let mut c = 0.0;
    for t in 0..30 {
        c += 0.1 * (50.0 - c);
        assert!((sim.c_inf[0][t] - c).abs() < 1e-12);
    }
}

#[test]
fn ebooks_noiseless_path_is_monotone_and_saturates() {
    let m = ebooks_model((0.0, 0.0), 1.0);
    let sim = simulate_diffusion(&m, 200, 0, true).unwrap();
    assert!(sim.y[0].windows(2).all(|w| w[1] >= w[0]));
    let p = ebooks_local();
    let limit = p.theta * p.m_inf + (1.0 - p.theta) * p.m_imm;
    // Innovators approach M_inf geometrically and are still short at T=200.
    assert!(sim.y[0].iter().all(|v| *v <= limit + 1e-9));
    assert!(sim.y[0][199] > 0.99 * limit, "{} vs {limit}", sim.y[0][199]);
    assert_eq!(sim, simulate_diffusion(&m, 200, 0, true).unwrap());
}

#[test]
fn sur_correlation_shows_in_innovations() {
    let p = ebooks_local();
    let mut m = JointDiffusionModel::new(vec![p, p], (1.0, 1.0), 1.0);
    let mut w = DMatrix::identity(4, 4);
    w[(1, 3)] = 0.8;
    w[(3, 1)] = 0.8;
    m.state_noise = w;
    let sim = simulate_diffusion(&m, 500, 3, false).unwrap();
    let a: Vec<f64> = sim.innovations.iter().map(|e| e[1]).collect();
    let b: Vec<f64> = sim.innovations.iter().map(|e| e[3]).collect();
    let r = strux::stats::pearson(&a, &b);
    assert!((r - 0.8).abs() < 0.1, "{r}");
}

#[test]
fn noiseless_forecasts_at_truth() {
    let m = ebooks_model((1e-6, 1e-6), 1e-6);
    let sim = simulate_diffusion(&m, 200, 0, true).unwrap();
    let mut mm = m.clone();
    mm.initial_var = 1e-9;
    let f = forecast_errors(&mm, &sim.y, UkfParams::default()).unwrap();
    assert!(f.mad < 1e-6, "{}", f.mad);
}

#[test]
fn constant_series_mad_is_drift() {
    // Zero rates: the forecast stays at the initial level, so the errors are the offsets.
    let p = SegmentedDiffusionParams { p_inf: 0.0, q_inf: 0.0, p_imm: 0.0, q_imm: 0.0, m_inf: 10.0, m_imm: 10.0, w: 0.5, theta: 0.5 };
    let mut m = JointDiffusionModel::new(vec![p], (1e-12, 1e-12), 1.0);
    m.initial_state = vec![2.0, 2.0];
    m.initial_var = 1e-12;
    let y = vec![vec![2.5, 2.5, 2.5]];
    let f = forecast_errors(&m, &y, UkfParams::default()).unwrap();
    assert!((f.mad - 0.5).abs() < 1e-6, "{}", f.mad);
    assert!((f.mse - 0.25).abs() < 1e-6);
}

#[test]
fn theta_zero_imitators_equal_observations() {
    let p = SegmentedDiffusionParams { theta: 1e-12, ..ebooks_local() };
    let mut m = ebooks_model((1e-8, 1e-8), 1e-10);
    m.params[0] = p;
    let sim = simulate_diffusion(&m, 40, 0, true).unwrap();
    let out = filter(&m, &sim.y, UkfParams::default(), true).unwrap();
    let path = imitator_path(&m, &out, false);
    for t in 0..40 {
        assert!((path[0][t] - sim.y[0][t]).abs() < 1e-4, "{t}: {} vs {}", path[0][t], sim.y[0][t]);
    }
    let sm = imitator_path(&m, &out, true);
    assert_eq!(sm[0][39], path[0][39]);
}

#[test]
fn weekly_snapshots() {
    let daily: Vec<f64> = (0..14).map(|d| d as f64).collect();
    assert_eq!(aggregate_end_of_period(&daily, 7), vec![6.0, 13.0]);
    assert_eq!(aggregate_end_of_period(&daily[..10], 7), vec![6.0, 9.0]);
}

#[test]
fn coding_round_trip() {
    let p = ebooks_local();
    let mut m = JointDiffusionModel::new(vec![p, p], (2.0, 3.0), 4.0);
    m.state_noise[(0, 1)] = 0.5;
    m.state_noise[(1, 0)] = 0.5;
    let c = DiffusionCoding::new(2, 1e-6);
    let u = c.encode(&m).unwrap();
    assert_eq!(u.len(), 16 + 10 + 2);
    let back = c.decode(&u, &m);
    for (a, b) in back.params[0].to_vec().iter().zip(p.to_vec()) {
        assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
    }
    assert!((back.state_noise - &m.state_noise).abs().max() < 1e-10);
}

#[test]
fn hierarchy_needs_enough_categories() {
    let phis = vec![vec![0.0; 8]; 3];
    assert!(fit_hierarchy(&phis, &[vec![1.0], vec![2.0], vec![3.0]]).is_none());
    let phis: Vec<Vec<f64>> = (0..6).map(|j| vec![j as f64 * 2.0 + 1.0; 8]).collect();
    let pop: Vec<Vec<f64>> = (0..6).map(|j| vec![j as f64]).collect();
    let h = fit_hierarchy(&phis, &pop).unwrap();
    assert!((h.delta[(0, 0)] - 1.0).abs() < 1e-10 && (h.delta[(0, 1)] - 2.0).abs() < 1e-10);
    // Exact fit leaves only the pseudo-prior in the variance.
    assert!((h.sigma2[0] - 2.0 / 8.0).abs() < 1e-10);
}

fn quick_cfg(seed: u64) -> DiffusionConfig {
    DiffusionConfig {
        mcem: MCEMConfig { tolerance: 1e-8, max_iterations: 6, monte_carlo_draws: 0 },
        ga: GAConfig { population: 40, generations: 150, mutation_decay: 0.98, ..GAConfig::default() },
        seed,
        ..DiffusionConfig::default()
    }
}

#[test]
fn profile_oracle_single_free_parameter() {
    let m = ebooks_model((0.01, 0.01), 0.01);
    let sim = simulate_diffusion(&m, 60, 0, true).unwrap();
    let coding = DiffusionCoding::new(1, 1e-6);
    let mut start = m.clone();
    start.params[0].p_imm = 0.25;
    let mut free = vec![false; coding.len()];
    free[coding.param_index(0, "p_imm").unwrap()] = true;
    let cfg = DiffusionConfig { free: Some(free), ga: GAConfig { population: 30, generations: 300, mutation_decay: 0.97, ..GAConfig::default() }, ..quick_cfg(1) };
    let fit = fit_map_from(&sim.y, &start, &cfg).unwrap();
    let got = fit.model.params[0].p_imm;
    assert!((got - 0.278).abs() < 1e-3, "{got}");
    assert!(fit.objective >= fit.objective_init);
    // Fixed coordinates untouched.
    assert!((fit.model.params[0].q_imm - m.params[0].q_imm).abs() < 1e-12);
}

#[test]
fn map_fit_improves_and_is_reproducible() {
    let m = ebooks_model((0.5, 2.0), 4.0);
    let sim = simulate_diffusion(&m, 60, 4, false).unwrap();
    let cfg = DiffusionConfig { mcem: MCEMConfig { max_iterations: 2, ..quick_cfg(0).mcem }, ga: GAConfig { population: 20, generations: 30, ..GAConfig::default() }, ..quick_cfg(2) };
    let a = fit_map(&sim.y, &[], &cfg).unwrap();
    assert!(a.objective >= a.objective_init);
    let b = fit_map(&sim.y, &[], &cfg).unwrap();
    assert_eq!(a, b);
    // First population: defaults jittered within ±10 %.
    let d = DiffusionDefaults::default();
    for member in &a.initial_population[1..] {
        let r = member[2] / d.p_imm;
        assert!((0.9..1.1).contains(&r), "{r}");
    }
    for (k, row) in a.filter.filtered.iter().enumerate() {
        let _ = k;
        assert!(row.cov[(0, 0)] >= 0.0);
    }
    let path = imitator_path(&a.model, &a.filter, false);
    assert!(path[0].iter().all(|v| *v >= 0.0 && *v <= a.model.params[0].m_imm));
}

#[test]
fn fast_loglik_matches_filter() {
    let p = ebooks_local();
    let mut m = JointDiffusionModel::new(vec![p, SegmentedDiffusionParams { m_imm: 900.0, ..p }], (0.5, 4.0), 4.0);
    m.state_noise[(1, 3)] = 1.0;
    m.state_noise[(3, 1)] = 1.0;
    let sim = simulate_diffusion(&m, 120, 5, false).unwrap();
    for ut in [UkfParams::default(), UkfParams { alpha: 1.0, ..UkfParams::default() }] {
        let a = filter(&m, &sim.y, ut, false).unwrap().loglik;
        let b = loglik(&m, &sim.y, ut).unwrap();
        assert!((a - b).abs() < 1e-8 * a.abs(), "{a} vs {b}");
    }
}
