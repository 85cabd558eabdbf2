//! Summary tables over whatever artifacts a directory holds.
//!
//! Missing artifacts are listed in the manifest and the run is marked
//! partial; the tables they would feed are still written, header only.

use std::path::{Path, PathBuf};

use crate::artifacts::*;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{read_matrix, write_rows};

const SUMMARY_HEADER: [&str; 7] = ["parameter", "mean", "median", "sd", "min", "max", "n"];

/// Mean, median, sample s.d. (0 for one value), min, max.
pub fn describe(xs: &[f64]) -> [f64; 5] {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    let median = if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) };
    [mean, median, sd, s[0], s[s.len() - 1]]
}

fn summary_row(name: &str, xs: &[f64]) -> Vec<String> {
    let mut r = vec![name.to_string()];
    r.extend(describe(xs).iter().map(f64::to_string));
    r.push(xs.len().to_string());
    r
}

fn header(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn optional<T: serde::de::DeserializeOwned>(run: &mut Run, dir: &Path, name: &str) -> CliResult<Option<T>> {
    let p = dir.join(name);
    if !p.is_file() {
        run.missing.push(name.to_string());
        return Ok(None);
    }
    read_json(&p).map(Some)
}

pub fn report(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let dir: PathBuf = match cfg.raw("input.dir") {
        Some(d) => cfg.resolve(d),
        None => run.out.clone(),
    };
    if !dir.is_dir() {
        return Err(CliError::Validation(format!("input.dir: {} is not a directory", dir.display())));
    }
    let auction: Option<AuctionFitArtifact> = optional(run, &dir, "auction_estimates.json")?;
    let mixture: Option<MixtureFitArtifact> = optional(run, &dir, "mixture_estimates.json")?;
    let diffusion: Option<DiffusionFitArtifact> = optional(run, &dir, "diffusion_estimates.json")?;
    let cf: Option<CounterfactualArtifact> = optional(run, &dir, "counterfactual.json")?;

    let mut rows = Vec::new();
    if let Some(a) = &auction {
        let cols: [(&str, fn(&BidderEstimate) -> f64); 4] =
            [("alpha", |b| b.alpha), ("beta", |b| b.beta), ("delta", |b| b.delta), ("rho", |b| b.rho)];
        for (name, f) in cols {
            let xs: Vec<f64> = a.bidders.iter().map(f).collect();
            if !xs.is_empty() {
                rows.push(summary_row(&format!("auction.{name}"), &xs));
            }
        }
        let cols: [(&str, fn(&AuctionEstimate) -> f64); 10] = [
            ("tau", |p| p.tau),
            ("gamma", |p| p.gamma),
            ("iota", |p| p.iota),
            ("eta", |p| p.eta),
            ("var_v", |p| p.var_v),
            ("var_w", |p| p.var_w),
            ("var_zeta1", |p| p.var_zeta1),
            ("var_xi1", |p| p.var_xi1),
            ("var_zeta2", |p| p.var_zeta2),
            ("var_xi2", |p| p.var_xi2),
        ];
        for (name, f) in cols {
            let xs: Vec<f64> = a.auctions.iter().map(f).collect();
            if !xs.is_empty() {
                rows.push(summary_row(&format!("auction.{name}"), &xs));
            }
        }
    }
    if let Some(m) = &mixture {
        for (k, c) in m.columns.iter().enumerate() {
            let xs: Vec<f64> = m.units.iter().filter_map(|u| u.coefficients.get(k).copied()).collect();
            if !xs.is_empty() {
                rows.push(summary_row(&format!("{}.{c}", m.model), &xs));
            }
        }
    }
    if let Some(d) = &diffusion {
        let cols: [(&str, fn(&CategoryEstimate) -> f64); 8] = [
            ("p_inf", |c| c.p_inf),
            ("q_inf", |c| c.q_inf),
            ("p_imm", |c| c.p_imm),
            ("q_imm", |c| c.q_imm),
            ("m_inf", |c| c.m_inf),
            ("m_imm", |c| c.m_imm),
            ("w", |c| c.w),
            ("theta", |c| c.theta),
        ];
        for (name, f) in cols {
            let xs: Vec<f64> = d.categories.iter().map(f).collect();
            if !xs.is_empty() {
                rows.push(summary_row(&format!("diffusion.{name}"), &xs));
            }
        }
    }
    write_rows(&run.path("parameter_summary.csv"), &header(&SUMMARY_HEADER), &rows)?;

    let sig: Vec<Vec<String>> = mixture
        .iter()
        .flat_map(|m| {
            m.significance.iter().map(|s| {
                vec![
                    s.coefficient.clone(),
                    s.positive.to_string(),
                    s.negative.to_string(),
                    s.null.to_string(),
                    (s.positive + s.negative + s.null).to_string(),
                ]
            })
        })
        .collect();
    write_rows(&run.path("significance.csv"), &header(&["coefficient", "positive", "negative", "null", "units"]), &sig)?;

    let mut cf_rows = Vec::new();
    if let Some(c) = &cf {
        let (base, scen) = counterfactual_sums(run, &dir)?;
        let tol = 1e-9 * (1.0 + c.baseline.abs().max(c.scenario_total.abs()));
        if (base - c.baseline).abs() > tol || (scen - c.scenario_total).abs() > tol {
            return Err(CliError::Estimation(format!(
                "counterfactual totals ({}, {}) disagree with their rows ({base}, {scen})",
                c.baseline, c.scenario_total
            )));
        }
        cf_rows.push(vec![
            c.scenario.clone(),
            base.to_string(),
            scen.to_string(),
            (scen - base).to_string(),
            c.rel_delta.map_or(String::new(), |r| r.to_string()),
            c.flagged.len().to_string(),
        ]);
    }
    write_rows(
        &run.path("counterfactual_summary.csv"),
        &header(&["scenario", "baseline", "scenario_total", "abs_delta", "rel_delta", "flagged"]),
        &cf_rows,
    )?;

    let chains = dir.join("chains.csv");
    let mut ch_rows = Vec::new();
    if chains.is_file() {
        if let Some((names, table)) = read_optional_matrix(&chains)? {
            for (k, name) in names.iter().enumerate().skip(1) {
                let xs: Vec<f64> = table.iter().map(|r| r[k]).collect();
                ch_rows.push(summary_row(name, &xs));
            }
        }
    } else {
        run.missing.push("chains.csv".into());
    }
    write_rows(&run.path("chain_summary.csv"), &header(&SUMMARY_HEADER), &ch_rows)
}

/// None for a header-only table.
fn read_optional_matrix(path: &Path) -> CliResult<Option<(Vec<String>, Vec<Vec<f64>>)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if r.records().next().is_none() {
        return Ok(None);
    }
    read_matrix(path).map(Some)
}

/// Baseline and scenario sums of `counterfactual_rows.csv`, in file order.
fn counterfactual_sums(run: &mut Run, dir: &Path) -> CliResult<(f64, f64)> {
    let p = dir.join("counterfactual_rows.csv");
    if !p.is_file() {
        run.missing.push("counterfactual_rows.csv".into());
        return Err(CliError::Validation(format!("{} is missing", p.display())));
    }
    let mut r = csv::Reader::from_path(&p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
    let (mut b, mut s) = (0.0, 0.0);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Validation(format!("{} row {}: {e}", p.display(), i + 1)))?;
        let num = |k: usize| -> CliResult<f64> {
            rec.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Validation(format!("{} row {}: column {k} is not a number", p.display(), i + 1)))
        };
        b += num(1)?;
        s += num(2)?;
    }
    Ok((b, s))
}
