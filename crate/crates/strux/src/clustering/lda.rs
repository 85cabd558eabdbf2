use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::stats::{digamma, ln_gamma};
use crate::{par, rng};

/// Bag-of-words documents as sparse (word id, count) lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub docs: Vec<Vec<(usize, u32)>>,
}

impl Corpus {
    pub fn new(vocab_size: usize, docs: Vec<Vec<(usize, u32)>>) -> Result<Self> {
        if vocab_size == 0 {
            return invalid("vocabulary must be nonempty");
        }
        if docs.is_empty() {
            return invalid("corpus has no documents");
        }
        for d in &docs {
            if let Some(&(w, _)) = d.iter().find(|(w, _)| *w >= vocab_size) {
                return invalid(format!("word id {w} outside vocabulary of {vocab_size}"));
            }
        }
        Ok(Self { vocab_size, docs })
    }

    pub fn doc_len(&self, d: usize) -> u32 {
        self.docs[d].iter().map(|(_, c)| c).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaVemConfig {
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Inner fixed-point sweeps per document per E-step.
    pub inner_iter: usize,
    pub inner_tol: f64,
    pub seed: u64,
}

impl Default for LdaVemConfig {
    fn default() -> Self {
        Self { k: 10, alpha: 0.1, eta: 0.01, tol: 1e-8, max_iter: 200, inner_iter: 50, inner_tol: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    /// k×V row-stochastic topic-word matrix.
    pub beta: Vec<Vec<f64>>,
    /// Dirichlet parameters of the topic-word posterior, eta + expected counts.
    pub lambda: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    /// Per document, one simplex vector per distinct word (aligned with the corpus entries).
    pub phi: Vec<Vec<Vec<f64>>>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone)]
struct DocState {
    gamma: Vec<f64>,
    phi: Vec<Vec<f64>>,
}

fn doc_elbo(doc: &[(usize, u32)], st: &DocState, log_beta: &[Vec<f64>], alpha: f64) -> f64 {
    let k = st.gamma.len();
    let gsum: f64 = st.gamma.iter().sum();
    let dg = digamma(gsum);
    let elog: Vec<f64> = st.gamma.iter().map(|g| digamma(*g) - dg).collect();
    let mut v = ln_gamma(k as f64 * alpha) - k as f64 * ln_gamma(alpha);
    v += elog.iter().map(|e| (alpha - 1.0) * e).sum::<f64>();
    for ((w, c), ph) in doc.iter().zip(&st.phi) {
        let c = *c as f64;
        for i in 0..k {
            if ph[i] > 0.0 {
                v += c * ph[i] * (elog[i] + log_beta[i][*w] - ph[i].ln());
            }
        }
    }
    v -= ln_gamma(gsum) - st.gamma.iter().map(|g| ln_gamma(*g)).sum::<f64>();
    v -= st.gamma.iter().zip(&elog).map(|(g, e)| (g - 1.0) * e).sum::<f64>();
    v
}

fn e_step_doc(doc: &[(usize, u32)], st: &mut DocState, beta: &[Vec<f64>], alpha: f64, iters: usize, tol: f64) {
    let k = st.gamma.len();
    for _ in 0..iters {
        let eg: Vec<f64> = st.gamma.iter().map(|g| digamma(*g).exp()).collect();
        for ((w, _), ph) in doc.iter().zip(st.phi.iter_mut()) {
            let mut s = 0.0;
            for i in 0..k {
                ph[i] = beta[i][*w] * eg[i];
                s += ph[i];
            }
            if s > 0.0 {
                ph.iter_mut().for_each(|p| *p /= s);
            } else {
                ph.iter_mut().for_each(|p| *p = 1.0 / k as f64);
            }
        }
        let mut change = 0.0f64;
        for i in 0..k {
            let g = alpha + doc.iter().zip(&st.phi).map(|((_, c), ph)| *c as f64 * ph[i]).sum::<f64>();
            change = change.max((g - st.gamma[i]).abs() / st.gamma[i].abs().max(1.0));
            st.gamma[i] = g;
        }
        if change < tol {
            break;
        }
    }
}

/// Smoothed MAP update: beta_i ∝ eta + expected counts. Returns (beta, lambda).
fn m_step(corpus: &Corpus, states: &[DocState], k: usize, eta: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let v = corpus.vocab_size;
    let mut lambda = vec![vec![eta; v]; k];
    for (doc, st) in corpus.docs.iter().zip(states) {
        if doc.iter().all(|(_, c)| *c == 0) {
            continue;
        }
        for ((w, c), ph) in doc.iter().zip(&st.phi) {
            for i in 0..k {
                lambda[i][*w] += *c as f64 * ph[i];
            }
        }
    }
    let beta = lambda
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|x| x / s).collect()
        })
        .collect();
    (beta, lambda)
}

/// Variational EM with a symmetric Dirichlet(alpha) document prior and
/// eta-smoothed topics. The trace holds the summed document bounds plus
/// eta·Σ log beta, which the coordinate updates never decrease.
pub fn lda_vem(corpus: &Corpus, cfg: &LdaVemConfig) -> Result<LdaModel> {
    let (k, alpha, eta) = (cfg.k, cfg.alpha, cfg.eta);
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if !(alpha > 0.0 && eta > 0.0) {
        return invalid("alpha and eta must be positive");
    }
    let v = corpus.vocab_size;
    let mut r = rng::stream(cfg.seed, &[0x1da]);
    let mut beta: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let row: Vec<f64> = (0..v).map(|_| 1.0 + r.random::<f64>()).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let mut states: Vec<DocState> = corpus
        .docs
        .iter()
        .enumerate()
        .map(|(d, doc)| DocState {
            gamma: vec![alpha + corpus.doc_len(d) as f64 / k as f64; k],
            phi: vec![vec![1.0 / k as f64; k]; doc.len()],
        })
        .collect();
    let mut lambda = vec![vec![eta; v]; k];
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter.max(1) {
        par::for_each_mut(&mut states, |d, st| {
            let doc = &corpus.docs[d];
            if doc.iter().all(|(_, c)| *c == 0) {
                st.gamma = vec![alpha; k];
                return;
            }
            e_step_doc(doc, st, &beta, alpha, cfg.inner_iter, cfg.inner_tol);
        });
        let (b, l) = m_step(corpus, &states, k, eta);
        beta = b;
        lambda = l;
        let log_beta: Vec<Vec<f64>> = beta.iter().map(|row| row.iter().map(|x| x.ln()).collect()).collect();
        let terms = par::map_slice(&corpus.docs, |d, doc| doc_elbo(doc, &states[d], &log_beta, alpha));
        let prior: f64 = log_beta.iter().flatten().map(|lb| eta * lb).sum();
        let obj = par::sum_ordered(&terms) + prior;
        let prev = trace.last().copied();
        trace.push(obj);
        if let Some(p) = prev {
            if (obj - p).abs() <= cfg.tol * (1.0 + obj.abs()) {
                converged = true;
                break;
            }
        }
    }
    Ok(LdaModel {
        k,
        alpha,
        eta,
        beta,
        lambda,
        gamma: states.iter().map(|s| s.gamma.clone()).collect(),
        phi: states.into_iter().map(|s| s.phi).collect(),
        elbo_trace: trace,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaGibbsModel {
    pub k: usize,
    /// k×V predictive topic-word probabilities.
    pub beta_hat: Vec<Vec<f64>>,
    /// D×k predictive document-topic probabilities.
    pub theta_hat: Vec<Vec<f64>>,
    /// Final topic of every token; tokens expand the corpus counts in order.
    pub z: Vec<Vec<usize>>,
    /// How often each token sat in each topic over all sweeps.
    pub z_tally: Vec<Vec<Vec<u32>>>,
    /// Topic-word counts at the final state.
    pub topic_word: Vec<Vec<u32>>,
}

/// Collapsed Gibbs sampler over token topic assignments.
pub fn lda_gibbs(corpus: &Corpus, k: usize, alpha: f64, delta: f64, iterations: usize, seed: u64) -> Result<LdaGibbsModel> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if !(alpha > 0.0 && delta > 0.0) {
        return invalid("alpha and delta must be positive");
    }
    let v = corpus.vocab_size;
    let words: Vec<Vec<usize>> = corpus
        .docs
        .iter()
        .map(|doc| doc.iter().flat_map(|(w, c)| std::iter::repeat_n(*w, *c as usize)).collect())
        .collect();
    let mut r = rng::stream(seed, &[0x91bb]);
    let mut nkw = vec![vec![0u32; v]; k];
    let mut nk = vec![0u32; k];
    let mut ndk = vec![vec![0u32; k]; words.len()];
    let mut z: Vec<Vec<usize>> = words
        .iter()
        .enumerate()
        .map(|(d, ws)| {
            ws.iter()
                .map(|&w| {
                    let t = r.random_range(0..k);
                    nkw[t][w] += 1;
                    nk[t] += 1;
                    ndk[d][t] += 1;
                    t
                })
                .collect()
        })
        .collect();
    let mut tally: Vec<Vec<Vec<u32>>> = words.iter().map(|ws| vec![vec![0u32; k]; ws.len()]).collect();
    let vd = v as f64 * delta;
    let mut p = vec![0.0; k];
    for _ in 0..iterations {
        for d in 0..words.len() {
            for (n, &w) in words[d].iter().enumerate() {
                let old = z[d][n];
                nkw[old][w] -= 1;
                nk[old] -= 1;
                ndk[d][old] -= 1;
                let mut s = 0.0;
                for t in 0..k {
                    s += (nkw[t][w] as f64 + delta) / (nk[t] as f64 + vd) * (ndk[d][t] as f64 + alpha);
                    p[t] = s;
                }
                let u = r.random::<f64>() * s;
                let new = p.iter().position(|c| u < *c).unwrap_or(k - 1);
                z[d][n] = new;
                nkw[new][w] += 1;
                nk[new] += 1;
                ndk[d][new] += 1;
                tally[d][n][new] += 1;
            }
        }
    }
    let beta_hat = (0..k).map(|t| (0..v).map(|w| (nkw[t][w] as f64 + delta) / (nk[t] as f64 + vd)).collect()).collect();
    let theta_hat = ndk
        .iter()
        .map(|row| {
            let nd: u32 = row.iter().sum();
            row.iter().map(|c| (*c as f64 + alpha) / (nd as f64 + k as f64 * alpha)).collect()
        })
        .collect();
    Ok(LdaGibbsModel { k, beta_hat, theta_hat, z, z_tally: tally, topic_word: nkw })
}

/// Collapsed log p(w | z) from topic-word counts.
pub fn lda_gibbs_loglik(topic_word: &[Vec<u32>], delta: f64) -> f64 {
    let k = topic_word.len() as f64;
    let v = topic_word.first().map_or(0, |r| r.len()) as f64;
    let mut ll = k * (ln_gamma(v * delta) - v * ln_gamma(delta));
    for row in topic_word {
        let tot: u32 = row.iter().sum();
        ll += row.iter().map(|c| ln_gamma(*c as f64 + delta)).sum::<f64>();
        ll -= ln_gamma(tot as f64 + v * delta);
    }
    ll
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicSparsity {
    pub topic: usize,
    /// Documents whose largest topic share is this topic.
    pub dominant_docs: usize,
    /// Average share across documents.
    pub mean_share: f64,
    pub sparse: bool,
}

/// Per-topic usage from document-topic shares; topics dominating fewer than
/// `min_docs` documents are flagged.
pub fn sparsity_report(doc_topic: &[Vec<f64>], min_docs: usize) -> Vec<TopicSparsity> {
    let k = doc_topic.first().map_or(0, |r| r.len());
    let mut dom = vec![0usize; k];
    let mut share = vec![0.0; k];
    for row in doc_topic {
        let s: f64 = row.iter().sum();
        let mut best = 0;
        for t in 0..k {
            share[t] += row[t] / s;
            if row[t] > row[best] {
                best = t;
            }
        }
        if k > 0 {
            dom[best] += 1;
        }
    }
    let n = doc_topic.len().max(1) as f64;
    (0..k)
        .map(|t| TopicSparsity { topic: t, dominant_docs: dom[t], mean_share: share[t] / n, sparse: dom[t] < min_docs })
        .collect()
}
