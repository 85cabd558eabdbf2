//! Principal-component factors with varimax rotation.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// p×m loadings on the standardized kept columns.
    pub loadings: DMatrix<f64>,
    /// m×m orthogonal rotation applied to the unrotated loadings.
    pub rotation: DMatrix<f64>,
    /// Share of total standardized variance per factor.
    pub explained_variance: Vec<f64>,
    pub cumulative_explained: f64,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Original column indices used by the model.
    pub kept_columns: Vec<usize>,
    /// Zero-variance columns dropped at extraction.
    pub dropped_columns: Vec<usize>,
    /// Number of columns in the input the model was fit on.
    pub input_columns: usize,
}

fn column_stats(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    for c in x.column_iter() {
        let m = c.sum() / n;
        let v = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        means.push(m);
        sds.push(v.sqrt());
    }
    (means, sds)
}

/// Largest-magnitude entry of each column made positive; the same flips are
/// applied to the rotation columns.
fn fix_signs(load: &mut DMatrix<f64>, rot: &mut DMatrix<f64>) {
    for j in 0..load.ncols() {
        let col = load.column(j);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            load.column_mut(j).neg_mut();
            rot.column_mut(j).neg_mut();
        }
    }
}

fn shares(load: &DMatrix<f64>) -> Vec<f64> {
    let p = load.nrows() as f64;
    load.column_iter().map(|c| (c.norm_squared() / p).clamp(0.0, 1.0)).collect()
}

/// Principal components of the correlation matrix of `x`, keeping `m`.
pub fn extract_factors(x: &DMatrix<f64>, m: usize) -> Result<FactorModel> {
    let (n, p_all) = x.shape();
    if n < 2 {
        return invalid("need at least two rows");
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite value in data");
    }
    let (means_all, sds_all) = column_stats(x);
    let kept: Vec<usize> = (0..p_all).filter(|&j| sds_all[j] > 0.0).collect();
    let dropped: Vec<usize> = (0..p_all).filter(|&j| sds_all[j] <= 0.0).collect();
    let p = kept.len();
    if p == 0 {
        return invalid("every column has zero variance");
    }
    if m == 0 || m > p {
        return invalid(format!("factor count {m} must be in 1..={p}"));
    }
    let means: Vec<f64> = kept.iter().map(|&j| means_all[j]).collect();
    let sds: Vec<f64> = kept.iter().map(|&j| sds_all[j]).collect();
    let z = DMatrix::from_fn(n, p, |i, j| (x[(i, kept[j])] - means[j]) / sds[j]);
    let corr = crate::linalg::symmetrize(&(z.transpose() * &z / (n as f64 - 1.0)));
    let eig = corr.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut load = DMatrix::zeros(p, m);
    for (j, &o) in order.iter().take(m).enumerate() {
        let lam = eig.eigenvalues[o].max(0.0);
        load.set_column(j, &(eig.eigenvectors.column(o) * lam.sqrt()));
    }
    // Sign flips of unrotated columns are absorbed into the loadings.
    fix_signs(&mut load, &mut DMatrix::identity(m, m));
    let rot = DMatrix::identity(m, m);
    let ev = shares(&load);
    Ok(FactorModel {
        cumulative_explained: ev.iter().sum::<f64>().min(1.0),
        explained_variance: ev,
        loadings: load,
        rotation: rot,
        means,
        sds,
        kept_columns: kept,
        dropped_columns: dropped,
        input_columns: p_all,
    })
}

/// Raw varimax criterion, summed over columns.
pub fn varimax_criterion(load: &DMatrix<f64>) -> f64 {
    let p = load.nrows() as f64;
    load.column_iter()
        .map(|c| {
            let s2: f64 = c.iter().map(|v| v * v).sum();
            c.iter().map(|v| v.powi(4)).sum::<f64>() - s2 * s2 / p
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarimaxOutput {
    pub model: FactorModel,
    /// Criterion on the (row-normalized, if Kaiser) loadings after each sweep.
    pub criterion_trace: Vec<f64>,
    pub sweeps: usize,
}

/// Varimax by the SVD iteration. `kaiser` normalizes rows to unit
/// communality before rotating and restores them after.
pub fn varimax_rotate(model: &FactorModel, tol: f64, kaiser: bool) -> Result<VarimaxOutput> {
    let (p, m) = model.loadings.shape();
    if m < 2 {
        return Ok(VarimaxOutput { model: model.clone(), criterion_trace: Vec::new(), sweeps: 0 });
    }
    let comm: Vec<f64> = model.loadings.row_iter().map(|r| r.norm()).collect();
    let mut x = model.loadings.clone();
    if kaiser {
        for i in 0..p {
            if comm[i] > 0.0 {
                x.row_mut(i).scale_mut(1.0 / comm[i]);
            }
        }
    }
    let mut t = DMatrix::<f64>::identity(m, m);
    let mut d = 0.0;
    let mut trace = vec![varimax_criterion(&x)];
    let mut sweeps = 0;
    for _ in 0..1000 {
        sweeps += 1;
        let z = &x * &t;
        let colsq: Vec<f64> = z.column_iter().map(|c| c.norm_squared()).collect();
        let target = DMatrix::from_fn(p, m, |i, j| z[(i, j)].powi(3) - z[(i, j)] * colsq[j] / p as f64);
        let b = x.transpose() * target;
        let svd = b.svd(true, true);
        let (u, vt) = (svd.u.ok_or_else(|| Error::Numerical("svd".into()))?, svd.v_t.ok_or_else(|| Error::Numerical("svd".into()))?);
        t = u * vt;
        let dpast = d;
        d = svd.singular_values.sum();
        trace.push(varimax_criterion(&(&x * &t)));
        if d < dpast * (1.0 + tol) {
            break;
        }
    }
    let mut load = &x * &t;
    if kaiser {
        for i in 0..p {
            load.row_mut(i).scale_mut(comm[i]);
        }
    }
    let mut rot = &model.rotation * &t;
    fix_signs(&mut load, &mut rot);
    let ev = shares(&load);
    let out = FactorModel {
        cumulative_explained: ev.iter().sum::<f64>().min(1.0),
        explained_variance: ev,
        loadings: load,
        rotation: rot,
        ..model.clone()
    };
    Ok(VarimaxOutput { model: out, criterion_trace: trace, sweeps })
}

/// Least-squares scores: F = (BᵀB)⁻¹Bᵀz per row of standardized `x_new`.
pub fn factor_scores(x_new: &DMatrix<f64>, model: &FactorModel) -> Result<DMatrix<f64>> {
    if x_new.ncols() != model.input_columns {
        return Err(Error::Dimension(format!("{} columns, model expects {}", x_new.ncols(), model.input_columns)));
    }
    let b = &model.loadings;
    let btb = b.transpose() * b;
    let chol = crate::linalg::cholesky_jitter(&btb)?;
    let proj = chol.solve(&b.transpose());
    let n = x_new.nrows();
    let p = model.kept_columns.len();
    let z = DMatrix::from_fn(n, p, |i, j| (x_new[(i, model.kept_columns[j])] - model.means[j]) / model.sds[j]);
    Ok((proj * z.transpose()).transpose())
}

/// Standardized row of the kept columns, for residual checks.
pub fn standardize_row(x: &[f64], model: &FactorModel) -> DVector<f64> {
    DVector::from_iterator(model.kept_columns.len(), model.kept_columns.iter().enumerate().map(|(j, &c)| (x[c] - model.means[j]) / model.sds[j]))
}
