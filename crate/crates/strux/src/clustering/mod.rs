//! Segmentation: k-means, Gaussian mixtures, LDA, partition comparison and
//! consensus.

mod gmm;
mod kmeans;
mod lda;
mod partition;

pub use gmm::{gmm_em, gmm_select, CovMode, GaussianMixture, GmmFit, GmmSelection};
pub use kmeans::{kmeans, KmeansInit, KmeansResult};
pub use lda::{
    lda_gibbs, lda_gibbs_loglik, lda_vem, sparsity_report, Corpus, LdaGibbsModel, LdaModel, LdaVemConfig, TopicSparsity,
};
pub use partition::{adjusted_rand_index, ensemble_consensus, Partition};

use crate::error::{invalid, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_rows(data: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = data.first() else {
        return invalid("empty data");
    };
    let d = first.len();
    if d == 0 {
        return invalid("zero-dimensional data");
    }
    for row in data {
        if row.len() != d {
            return Err(crate::Error::Dimension(format!("row length {} vs {}", row.len(), d)));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite data value");
        }
    }
    Ok(d)
}
