use rand::seq::index::sample;
use rand::Rng as _;

use super::{check_rows, sq_dist, Partition};
use crate::error::{invalid, Result};
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmeansInit {
    Random,
    PlusPlus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub partition: Partition,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares at the returned assignment.
    pub wss: f64,
    /// WSS after each assignment step.
    pub wss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of times an empty cluster was reseeded.
    pub reseeds: usize,
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn init_centroids(data: &[Vec<f64>], k: usize, init: KmeansInit, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, &[0x6b6d]);
    match init {
        KmeansInit::Random => sample(&mut r, data.len(), k).into_iter().map(|i| data[i].clone()).collect(),
        KmeansInit::PlusPlus => {
            let mut cents = vec![data[r.random_range(0..data.len())].clone()];
            let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &cents[0])).collect();
            while cents.len() < k {
                let total: f64 = d2.iter().sum();
                let pick = if total > 0.0 {
                    let u = r.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut idx = data.len() - 1;
                    for (i, w) in d2.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            idx = i;
                            break;
                        }
                    }
                    idx
                } else {
                    r.random_range(0..data.len())
                };
                cents.push(data[pick].clone());
                for (i, x) in data.iter().enumerate() {
                    d2[i] = d2[i].min(sq_dist(x, &cents[cents.len() - 1]));
                }
            }
            cents
        }
    }
}

/// Lloyd's algorithm. An empty cluster gets its centroid moved to the point
/// farthest from its current centroid.
pub fn kmeans(data: &[Vec<f64>], k: usize, init: KmeansInit, max_iter: usize, seed: u64) -> Result<KmeansResult> {
    let d = check_rows(data)?;
    let n = data.len();
    if k == 0 || k > n {
        return invalid(format!("k = {k} must be in 1..={n}"));
    }
    let mut cents = init_centroids(data, k, init, seed);
    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut reseeds = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut dists = vec![0.0; n];
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let near = par::map_slice(data, |_, x| nearest(x, &cents));
        let changed = near.iter().zip(&assign).any(|(a, b)| a.0 != *b);
        for (i, (c, dd)) in near.into_iter().enumerate() {
            assign[i] = c;
            dists[i] = dd;
        }
        trace.push(par::sum_ordered(&dists));
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in data.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                cents[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&data[a], &cents[assign[a]]);
                        let db = sq_dist(&data[b], &cents[assign[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                cents[c] = data[far].clone();
                reseeds += 1;
            }
        }
    }
    let wss = *trace.last().unwrap_or(&0.0);
    Ok(KmeansResult { partition: Partition { assignment: assign, k }, centroids: cents, wss, wss_trace: trace, iterations, converged, reseeds })
}
