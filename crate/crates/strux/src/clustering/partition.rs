use std::collections::BTreeMap;

use crate::error::{invalid, Result};

/// Hard assignment of units to clusters `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub k: usize,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&c| c >= k) {
            return invalid(format!("cluster id {bad} outside 0..{k}"));
        }
        Ok(Self { assignment, k })
    }

    /// Build from arbitrary labels; ids follow first appearance.
    pub fn from_labels<L: Ord + Clone>(labels: &[L]) -> Self {
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        for l in labels {
            if !map.contains_key(l) {
                map.insert(l.clone(), order.len());
                order.push(());
            }
        }
        let assignment = labels.iter().map(|l| map[l]).collect();
        Self { assignment, k: order.len() }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &c in &self.assignment {
            s[c] += 1;
        }
        s
    }

    /// Cluster ids with no members.
    pub fn empty_clusters(&self) -> Vec<usize> {
        self.sizes().iter().enumerate().filter(|(_, &n)| n == 0).map(|(c, _)| c).collect()
    }
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Hubert–Arabie adjusted Rand index.
pub fn adjusted_rand_index(p1: &Partition, p2: &Partition) -> Result<f64> {
    if p1.len() != p2.len() {
        return invalid(format!("partitions cover {} and {} units", p1.len(), p2.len()));
    }
    let n = p1.len() as u64;
    let mut table = vec![0u64; p1.k * p2.k];
    for (&a, &b) in p1.assignment.iter().zip(&p2.assignment) {
        table[a * p2.k + b] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let rows: f64 = p1.sizes().iter().map(|&c| choose2(c as u64)).sum();
    let cols: f64 = p2.sizes().iter().map(|&c| choose2(c as u64)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        // Both partitions trivial (all singletons or one block) and identical.
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Average-linkage agglomeration on the co-assignment similarity, cut at
/// `k_cut` clusters. Ties merge the lowest-index pair first.
pub fn ensemble_consensus(partitions: &[Partition], k_cut: usize) -> Result<Partition> {
    if partitions.len() < 2 {
        return invalid("consensus needs at least two partitions");
    }
    let n = partitions[0].len();
    if partitions.iter().any(|p| p.len() != n) {
        return invalid("partitions cover different unit sets");
    }
    if k_cut == 0 || k_cut > n {
        return invalid(format!("k_cut = {k_cut} must be in 1..={n}"));
    }
    let m = partitions.len() as f64;
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let agree = partitions.iter().filter(|p| p.assignment[i] == p.assignment[j]).count();
            sim[i * n + j] = agree as f64 / m;
        }
    }
    // Cluster c holds members; link[c][d] is the summed similarity between clusters.
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut link = sim.clone();
    let mut alive = n;
    while alive > k_cut {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            let Some(ma) = &members[a] else { continue };
            for b in (a + 1)..n {
                let Some(mb) = &members[b] else { continue };
                let avg = link[a * n + b] / (ma.len() * mb.len()) as f64;
                if best.is_none_or(|(v, _, _)| avg > v) {
                    best = Some((avg, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two clusters alive");
        let mb = members[b].take().unwrap_or_default();
        members[a].as_mut().expect("alive").extend(mb);
        for c in 0..n {
            let v = link[a * n + c] + link[b * n + c];
            link[a * n + c] = v;
            link[c * n + a] = v;
        }
        alive -= 1;
    }
    let mut assignment = vec![0; n];
    let mut id = 0;
    for ms in members.iter().flatten() {
        for &u in ms {
            assignment[u] = id;
        }
        id += 1;
    }
    // Relabel by first appearance so the output is canonical.
    Ok(Partition::from_labels(&assignment))
}
