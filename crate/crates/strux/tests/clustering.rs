use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use strux::clustering::*;
use strux::rng;

fn blobs(centers: &[(f64, f64)], per: usize, sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng::stream(seed, &[1]);
    let nd = Normal::new(0.0, sd).unwrap();
    let mut xs = Vec::new();
    let mut lab = Vec::new();
    for (c, (a, b)) in centers.iter().enumerate() {
        for _ in 0..per {
            xs.push(vec![a + nd.sample(&mut r), b + nd.sample(&mut r)]);
            lab.push(c);
        }
    }
    (xs, lab)
}

fn part(v: &[usize]) -> Partition {
    Partition::from_labels(v)
}

#[test]
fn kmeans_two_blobs() {
    let mut ok = 0;
    for seed in 0..10 {
        let (xs, lab) = blobs(&[(0.0, 0.0), (10.0, 10.0)], 50, 0.5, seed);
        let r = kmeans(&xs, 2, KmeansInit::PlusPlus, 100, seed).unwrap();
        if adjusted_rand_index(&r.partition, &part(&lab)).unwrap() == 1.0 {
            ok += 1;
        }
        assert!(r.wss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
    assert!(ok >= 9);
}

#[test]
fn kmeans_trivial_cases() {
    let (xs, _) = blobs(&[(0.0, 0.0), (3.0, 1.0)], 6, 1.0, 2);
    let r = kmeans(&xs, xs.len(), KmeansInit::Random, 50, 0).unwrap();
    assert!(r.wss.abs() < 1e-12);
    let r1 = kmeans(&xs, 1, KmeansInit::Random, 50, 0).unwrap();
    let mean: Vec<f64> = (0..2).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64).collect();
    let tss: f64 = xs.iter().map(|x| (x[0] - mean[0]).powi(2) + (x[1] - mean[1]).powi(2)).sum();
    assert!((r1.wss - tss).abs() < 1e-9);
    assert!(kmeans(&xs, xs.len() + 1, KmeansInit::Random, 10, 0).is_err());
}

#[test]
fn gmm_single_component_moments() {
    let (xs, _) = blobs(&[(1.0, -2.0)], 200, 1.3, 5);
    let fit = gmm_em(&xs, 1, CovMode::Full, 1e-12, 50, 0).unwrap();
    let n = xs.len() as f64;
    let m: Vec<f64> = (0..2).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    for j in 0..2 {
        assert!((fit.mixture.means[0][j] - m[j]).abs() < 1e-8);
        for l in 0..2 {
            let c = xs.iter().map(|x| (x[j] - m[j]) * (x[l] - m[l])).sum::<f64>() / n;
            assert!((fit.mixture.covariances[0][(j, l)] - c).abs() < 1e-8);
        }
    }
    assert!((fit.mixture.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}

#[test]
fn gmm_bic_selects_three() {
    let mut ok = 0;
    for seed in 0..10 {
        let (xs, _) = blobs(&[(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)], 100, 1.0, 100 + seed);
        let sel = gmm_select(&xs, &[1, 2, 3, 4, 5, 6], CovMode::Full, seed).unwrap();
        if sel.best_k == 3 {
            ok += 1;
        }
    }
    assert!(ok >= 9, "{ok}/10");
}

#[test]
fn gmm_loglik_monotone_on_fixtures() {
    for seed in 0..20 {
        let (xs, _) = blobs(&[(0.0, 0.0), (3.0, 1.0), (1.0, 4.0)], 40, 1.2, 300 + seed);
        let fit = gmm_em(&xs, 3, CovMode::Full, 1e-12, 300, seed).unwrap();
        assert!(!fit.ridged);
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "seed {seed}: {} -> {}", w[0], w[1]);
        }
        for i in 0..xs.len() {
            let s: f64 = fit.responsibilities.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn gmm_symmetric_point_is_split_evenly() {
    let g = GaussianMixture {
        k: 2,
        means: vec![nalgebra::DVector::from_vec(vec![-1.0]), nalgebra::DVector::from_vec(vec![1.0])],
        covariances: vec![nalgebra::DMatrix::from_element(1, 1, 1.0); 2],
        weights: vec![0.5, 0.5],
        mode: CovMode::Full,
    };
    let a = g.logpdf(&nalgebra::DVector::from_vec(vec![0.0])).unwrap();
    let one = strux::stats::gauss_logpdf(0.0, 1.0, 1.0);
    assert!((a - one).abs() < 1e-12);
    let r = g.responsibilities(&nalgebra::DVector::from_vec(vec![0.0])).unwrap();
    assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
}

#[test]
fn gmm_select_degenerate_and_singleton() {
    let xs = vec![vec![1.0, 2.0]; 20];
    let sel = gmm_select(&xs, &[1, 2, 3], CovMode::Full, 0).unwrap();
    assert_eq!(sel.best_k, 1);
    assert!(sel.best.ridged);
    let (ys, _) = blobs(&[(0.0, 0.0)], 30, 1.0, 9);
    assert_eq!(gmm_select(&ys, &[4], CovMode::Diagonal, 0).unwrap().best_k, 4);
}

fn planted_corpus(topics: usize, block: usize, docs: usize, len: u32, seed: u64, mixed: bool) -> (Corpus, Vec<Vec<f64>>) {
    let v = topics * block;
    let mut r = rng::stream(seed, &[7]);
    let mut out = Vec::new();
    for d in 0..docs {
        let mut counts = vec![0u32; v];
        for _ in 0..len {
            let t = if mixed && r.random::<f64>() < 0.2 { r.random_range(0..topics) } else { d % topics };
            counts[t * block + r.random_range(0..block)] += 1;
        }
        out.push(counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(w, c)| (w, *c)).collect());
    }
    let truth = (0..topics).map(|t| (0..v).map(|w| if w / block == t { 1.0 / block as f64 } else { 0.0 }).collect()).collect();
    (Corpus::new(v, out).unwrap(), truth)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn best_perm_cosine(est: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let k = truth.len();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best = f64::NEG_INFINITY;
    // Heap's algorithm over small k.
    fn permute(idx: &mut Vec<usize>, n: usize, f: &mut dyn FnMut(&[usize])) {
        if n == 1 {
            f(idx);
            return;
        }
        for i in 0..n {
            permute(idx, n - 1, f);
            let j = if n % 2 == 0 { i } else { 0 };
            idx.swap(j, n - 1);
        }
    }
    permute(&mut idx, k, &mut |p| {
        let m = (0..k).map(|t| cosine(&est[p[t]], &truth[t])).sum::<f64>() / k as f64;
        best = best.max(m);
    });
    best
}

#[test]
fn lda_vem_recovers_planted_topics() {
    let (corpus, truth) = planted_corpus(3, 10, 300, 40, 1, true);
    let cfg = LdaVemConfig { k: 3, alpha: 0.5, eta: 0.01, tol: 1e-9, max_iter: 300, seed: 4, ..LdaVemConfig::default() };
    let m = lda_vem(&corpus, &cfg).unwrap();
    let c = best_perm_cosine(&m.beta, &truth);
    assert!(c > 0.9, "cosine {c}");
    for row in &m.beta {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
    assert!(m.gamma.iter().flatten().all(|g| *g > 0.0));
}

#[test]
fn lda_elbo_monotone_on_fixtures() {
    for seed in 0..20 {
        let (corpus, _) = planted_corpus(3, 6, 40, 25, 50 + seed, true);
        let cfg = LdaVemConfig { k: 3, alpha: 0.3, eta: 0.05, tol: 1e-12, max_iter: 60, seed, ..LdaVemConfig::default() };
        let m = lda_vem(&corpus, &cfg).unwrap();
        for w in m.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn lda_single_topic_is_smoothed_frequency() {
    let (corpus, _) = planted_corpus(2, 5, 20, 15, 3, true);
    let eta = 0.2;
    let m = lda_vem(&corpus, &LdaVemConfig { k: 1, eta, max_iter: 5, ..LdaVemConfig::default() }).unwrap();
    let mut freq = vec![eta; corpus.vocab_size];
    for d in &corpus.docs {
        for (w, c) in d {
            freq[*w] += *c as f64;
        }
    }
    let s: f64 = freq.iter().sum();
    for (b, f) in m.beta[0].iter().zip(&freq) {
        assert!((b - f / s).abs() < 1e-12);
    }
}

#[test]
fn lda_first_iteration_is_reproducible() {
    let (corpus, _) = planted_corpus(2, 4, 10, 12, 8, true);
    let cfg = LdaVemConfig { k: 2, max_iter: 1, ..LdaVemConfig::default() };
    let a = lda_vem(&corpus, &cfg).unwrap();
    let b = lda_vem(&corpus, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.elbo_trace.len(), 1);
}

#[test]
fn lda_empty_document_keeps_prior() {
    let corpus = Corpus::new(3, vec![vec![(0, 3), (1, 1)], vec![], vec![(2, 0)]]).unwrap();
    let m = lda_vem(&corpus, &LdaVemConfig { k: 2, alpha: 0.7, max_iter: 5, ..LdaVemConfig::default() }).unwrap();
    assert_eq!(m.gamma[1], vec![0.7, 0.7]);
    assert_eq!(m.gamma[2], vec![0.7, 0.7]);
}

#[test]
fn lda_gibbs_symmetry() {
    let corpus = Corpus::new(1, vec![vec![(0, 1)]]).unwrap();
    let m = lda_gibbs(&corpus, 2, 1.0, 1.0, 10_000, 11).unwrap();
    let t = &m.z_tally[0][0];
    let frac = t[0] as f64 / 10_000.0;
    assert!((frac - 0.5).abs() < 0.02, "{frac}");
}

#[test]
fn lda_gibbs_beats_random_assignment() {
    let (corpus, _) = planted_corpus(2, 8, 60, 30, 21, false);
    let m = lda_gibbs(&corpus, 2, 0.1, 0.01, 200, 3).unwrap();
    let fitted = lda_gibbs_loglik(&m.topic_word, 0.01);
    let baseline = lda_gibbs(&corpus, 2, 0.1, 0.01, 0, 3).unwrap();
    let random = lda_gibbs_loglik(&baseline.topic_word, 0.01);
    assert!(fitted > random, "{fitted} vs {random}");
    assert_eq!(m, lda_gibbs(&corpus, 2, 0.1, 0.01, 200, 3).unwrap());
    for row in &m.beta_hat {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn sparsity_flags_unused_topics() {
    let rep = sparsity_report(&[vec![0.9, 0.1, 0.0], vec![0.8, 0.2, 0.0], vec![0.1, 0.9, 0.0]], 1);
    assert_eq!(rep[0].dominant_docs, 2);
    assert!(rep[2].sparse && !rep[1].sparse);
}

/// Pair-counting Rand index adjusted by brute force over all unit pairs.
fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            pairs += 1.0;
            if sa {
                in_a += 1.0;
            }
            if sb {
                in_b += 1.0;
            }
            if sa && sb {
                both += 1.0;
            }
        }
    }
    let exp = in_a * in_b / pairs;
    (both - exp) / (0.5 * (in_a + in_b) - exp)
}

#[test]
fn ari_hand_fixture() {
    // a,b,c,d,e: {a,b},{c,d,e} vs {a,b,c},{d,e}
    let p1 = [0, 0, 1, 1, 1];
    let p2 = [0, 0, 0, 1, 1];
    let v = adjusted_rand_index(&part(&p1), &part(&p2)).unwrap();
    // Same-cluster pairs: p1 has 1 + 3 = 4, p2 has 3 + 1 = 4, both: ab, de = 2.
    let hand = (2.0 - 4.0 * 4.0 / 10.0) / (4.0 - 4.0 * 4.0 / 10.0);
    assert!((v - hand).abs() < 1e-12);
    assert!((v - ari_by_pairs(&p1, &p2)).abs() < 1e-12);
    assert_eq!(adjusted_rand_index(&part(&p1), &part(&p1)).unwrap(), 1.0);
    assert!(adjusted_rand_index(&part(&p1), &part(&[0, 1])).is_err());
}

#[test]
fn ari_null_mean_near_zero() {
    let mut r = rng::stream(77, &[]);
    let vals: Vec<f64> = (0..100)
        .map(|_| {
            let a: Vec<usize> = (0..50).map(|_| r.random_range(0..5)).collect();
            let b: Vec<usize> = (0..50).map(|_| r.random_range(0..5)).collect();
            adjusted_rand_index(&part(&a), &part(&b)).unwrap()
        })
        .collect();
    let m = vals.iter().sum::<f64>() / 100.0;
    assert!(m.abs() < 0.05, "{m}");
}

#[test]
fn consensus_cases() {
    let truth: Vec<usize> = (0..20).map(|i| i / 10).collect();
    let same = vec![part(&truth); 3];
    let c = ensemble_consensus(&same, 2).unwrap();
    assert_eq!(adjusted_rand_index(&c, &part(&truth)).unwrap(), 1.0);
    assert_eq!(c, part(&truth));

    let mut r = rng::stream(5, &[]);
    let noise: Vec<usize> = (0..20).map(|_| r.random_range(0..4)).collect();
    let c = ensemble_consensus(&[part(&truth), part(&truth), part(&noise)], 2).unwrap();
    assert!(adjusted_rand_index(&c, &part(&truth)).unwrap() > 0.9);
    assert!(ensemble_consensus(&same, 21).is_err());
    assert!(ensemble_consensus(&same[..1], 2).is_err());
}

proptest! {
    #[test]
    fn ari_symmetric_and_permutation_invariant(a in proptest::collection::vec(0usize..4, 8..30), shift in 1usize..4) {
        let n = a.len();
        let b: Vec<usize> = a.iter().enumerate().map(|(i, x)| (x + i * 7) % 3).collect();
        let pa = part(&a);
        let pb = part(&b[..n]);
        let ab = adjusted_rand_index(&pa, &pb).unwrap();
        let ba = adjusted_rand_index(&pb, &pa).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        let relabeled: Vec<usize> = a.iter().map(|x| (x + shift) % 4).collect();
        prop_assert!((adjusted_rand_index(&part(&relabeled), &pb).unwrap() - ab).abs() < 1e-12);
        prop_assert_eq!(adjusted_rand_index(&pa, &pa).unwrap(), 1.0);
    }

    #[test]
    fn kmeans_wss_nonincreasing(seed in 0u64..40, k in 1usize..6) {
        let (xs, _) = blobs(&[(0.0, 0.0), (2.0, 2.0), (-1.0, 3.0)], 10, 1.0, seed);
        let r = kmeans(&xs, k, KmeansInit::Random, 100, seed).unwrap();
        prop_assert!(r.wss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        prop_assert!(r.partition.assignment.iter().all(|&c| c < k));
    }
}
