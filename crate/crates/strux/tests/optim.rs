use proptest::prelude::*;
use strux::optim::*;

fn rosen(x: &[f64]) -> f64 {
    -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
}

#[test]
fn sa_quadratic() {
    let obj = |x: &[f64]| -(x[0] - 3.0).powi(2);
    let cfg = SAConfig { max_evals: 5000, seed: 1, ..SAConfig::default() };
    let r = simulated_annealing(&obj, &[0.0], &cfg).unwrap();
    assert!((r.x[0] - 3.0).abs() < 1e-2, "{:?}", r.x);
    assert!(r.f >= obj(&[0.0]));
    assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn sa_rosenbrock_nine_of_ten() {
    let mut ok = 0;
    for seed in 0..10 {
        let cfg = SAConfig { initial_temperature: 1.0, cooling_factor: 0.97, steps_per_temperature: 100, proposal_scale: 0.5, max_evals: 50_000, seed, adaptive: true };
        let r = simulated_annealing(&rosen, &[-1.0, 1.0], &cfg).unwrap();
        if r.f >= -1e-2 {
            ok += 1;
        }
    }
    assert!(ok >= 9, "{ok}/10");
}

#[test]
fn sa_rejects_unit_cooling() {
    let obj = |x: &[f64]| -x[0] * x[0];
    let cfg = SAConfig { cooling_factor: 1.0, ..SAConfig::default() };
    assert!(simulated_annealing(&obj, &[0.0], &cfg).is_err());
}

#[test]
fn ga_sphere() {
    let obj = |x: &[f64]| -x.iter().map(|v| v * v).sum::<f64>();
    let init: Vec<Vec<f64>> = (0..50).map(|i| vec![1.0 + 0.01 * i as f64, -1.0, 0.5, 2.0]).collect();
    let cfg = GAConfig { population: 50, generations: 200, seed: 3, ..GAConfig::default() };
    let r = genetic_optimize(&obj, &init, &cfg).unwrap();
    let norm = r.x.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 0.05, "{norm}");
    assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn ga_determinism_and_collapse() {
    let obj = |x: &[f64]| -(x[0] - 1.0).abs() - (x[1] + 2.0).powi(2);
    let init = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
    let cfg = GAConfig { population: 20, generations: 30, elitism: 1, seed: 9, ..GAConfig::default() };
    let a = genetic_optimize(&obj, &init, &cfg).unwrap();
    let b = genetic_optimize(&obj, &init, &cfg).unwrap();
    assert_eq!(a, b);
    let cfg0 = GAConfig { population: 5, generations: 10, mutation_scale: 0.0, elitism: 1, ..GAConfig::default() };
    let c = genetic_optimize(&obj, &[vec![0.5, 0.5]], &cfg0).unwrap();
    assert!(c.flag);
}

#[test]
fn argmax_cases() {
    let x = numeric_argmax_1d(|b| -(b - 7.0).powi(2), 0.0, 100.0, 1e-8).unwrap();
    assert!((x - 7.0).abs() < 1e-6);
    let x = numeric_argmax_1d(|b| b.ln(), 1.0, 5.0, 1e-8).unwrap();
    assert_eq!(x, 5.0);
    assert!(numeric_argmax_1d(|b| b, 1.0, 1.0, 1e-8).is_err());
}

#[test]
fn argmax_within_grid_tolerance() {
    let fs: Vec<Box<dyn Fn(f64) -> f64>> = vec![
        Box::new(|x: f64| (3.0 * x).sin() - 0.1 * x * x),
        Box::new(|x: f64| -(x - 0.3).abs()),
        Box::new(|x: f64| x * (-x).exp()),
    ];
    for f in &fs {
        let (lo, hi) = (-2.0, 4.0);
        let tol = 1e-6;
        let x = numeric_argmax_1d(|v| f(v), lo, hi, tol).unwrap();
        let gmax = (0..=10_000).map(|i| f(lo + (hi - lo) * i as f64 / 10_000.0)).fold(f64::NEG_INFINITY, f64::max);
        assert!(gmax - f(x) <= tol * (1.0 + f(x).abs()), "{} vs {}", f(x), gmax);
    }
}

#[test]
fn mcem_gaussian_mixture_toy() {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut r = strux::rng::stream(4, &[]);
    let data: Vec<f64> = (0..500)
        .map(|i| if i % 2 == 0 { -2.0 + r.sample::<f64, _>(StandardNormal) } else { 3.0 + r.sample::<f64, _>(StandardNormal) })
        .collect();
    let data = std::sync::Arc::new(data);
    let d2 = data.clone();
    // Parameters: (mu1, mu2) with unit variances and equal weights.
    let e_step = move |p: &[f64], _it: usize| -> strux::Result<Box<ObjFn<'static>>> {
        let resp: Vec<f64> = d2
            .iter()
            .map(|x| {
                let a = (-0.5 * (x - p[0]).powi(2)).exp();
                let b = (-0.5 * (x - p[1]).powi(2)).exp();
                a / (a + b)
            })
            .collect();
        let d3 = d2.clone();
        Ok(Box::new(move |q: &[f64]| -> f64 {
            d3.iter().zip(&resp).map(|(x, r)| -0.5 * r * (x - q[0]).powi(2) - 0.5 * (1.0 - r) * (x - q[1]).powi(2)).sum()
        }))
    };
    let d4 = data.clone();
    let m_step = move |_q: &ObjFn<'static>, p: &[f64], _it: usize| -> strux::Result<Vec<f64>> {
        let resp_cache = d4
            .iter()
            .map(|x| {
                let a = (-0.5 * (x - p[0]).powi(2)).exp();
                let b = (-0.5 * (x - p[1]).powi(2)).exp();
                a / (a + b)
            })
            .collect::<Vec<f64>>();
        let s1: f64 = resp_cache.iter().sum();
        let m1 = d4.iter().zip(&resp_cache).map(|(x, r)| x * r).sum::<f64>() / s1;
        let m2 = d4.iter().zip(&resp_cache).map(|(x, r)| x * (1.0 - r)).sum::<f64>() / (d4.len() as f64 - s1);
        Ok(vec![m1, m2])
    };
    let cfg = MCEMConfig { tolerance: 1e-8, max_iterations: 500, monte_carlo_draws: 0 };
    let res = mcem_drive(e_step, m_step, &cfg, &[-1.0, 1.0]).unwrap();
    assert!(res.converged);
    assert!((res.params[0] + 2.0).abs() < 0.1 && (res.params[1] - 3.0).abs() < 0.1, "{:?}", res.params);
    assert!(res.trace.iter().all(|it| it.q_after >= it.q_before));
    assert!(res.trace.last().unwrap().change < 1e-8);
}

#[test]
fn mcem_trace_length_equals_iterations() {
    // Fixed-point map x -> x/2 reaches the tolerance at a known iteration.
    let e = |_p: &[f64], _it: usize| -> strux::Result<Box<ObjFn<'static>>> { Ok(Box::new(|q: &[f64]| -q[0].abs())) };
    let m = |_q: &ObjFn<'static>, p: &[f64], _it: usize| -> strux::Result<Vec<f64>> { Ok(vec![p[0] / 2.0]) };
    let cfg = MCEMConfig { tolerance: 1e-3, max_iterations: 100, monte_carlo_draws: 0 };
    let res = mcem_drive(e, m, &cfg, &[1.0]).unwrap();
    // change at iteration k is 2^-k; first below 1e-3 at k = 10.
    assert_eq!(res.trace.len(), 10);
}

proptest! {
    #[test]
    fn transform_round_trip(v in -50.0f64..50.0, lo in -5.0f64..0.0, w in 0.1f64..10.0) {
        let t = ParamTransform::new(vec![
            TransformKind::Identity,
            TransformKind::LogPositive { shift: 0.0 },
            TransformKind::LogPositive { shift: 1e-6 },
            TransformKind::Logit { lo, hi: lo + w },
        ]);
        let x = vec![v, v.abs() + 0.01, v.abs() * 0.1 + 1e-3, lo + w * (0.05 + 0.9 * (v + 50.0) / 100.0)];
        let back = t.inverse(&t.forward(&x));
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn sa_trace_monotone(seed in 0u64..50, x0 in -3.0f64..3.0) {
        let obj = |x: &[f64]| -(x[0] * x[0]) + (5.0 * x[0]).cos();
        let cfg = SAConfig { max_evals: 600, seed, ..SAConfig::default() };
        let r = simulated_annealing(&obj, &[x0], &cfg).unwrap();
        prop_assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(r.f >= obj(&[x0]));
    }
}
