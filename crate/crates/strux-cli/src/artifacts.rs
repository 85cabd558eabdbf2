//! JSON artifacts and the run bookkeeping shared by every command.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, CliResult, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderEstimate {
    pub bidder_id: u64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionEstimate {
    pub auction_id: u64,
    pub tau: f64,
    pub gamma: f64,
    pub iota: f64,
    pub eta: f64,
    pub var_v: f64,
    pub var_w: f64,
    pub var_zeta1: f64,
    pub var_xi1: f64,
    pub var_zeta2: f64,
    pub var_xi2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParts {
    pub bids: f64,
    pub counts: f64,
    pub valuation: f64,
    pub auction_prior: f64,
    pub bidder_prior: f64,
    pub dirac: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionFitArtifact {
    pub bidders: Vec<BidderEstimate>,
    pub auctions: Vec<AuctionEstimate>,
    pub log_posterior: PosteriorParts,
    pub initial_log_posterior: f64,
    pub posterior_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitEstimate {
    pub unit_id: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceCount {
    pub coefficient: String,
    pub positive: usize,
    pub negative: usize,
    pub null: usize,
}

/// Posterior means from the mixture sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFitArtifact {
    pub model: String,
    pub columns: Vec<String>,
    pub units: Vec<UnitEstimate>,
    pub alpha_mean: f64,
    pub occupied_mean: f64,
    pub acceptance_mean: f64,
    pub truncation_tail: f64,
    pub significance_level: f64,
    pub significance: Vec<SignificanceCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEstimate {
    pub category_id: usize,
    pub p_inf: f64,
    pub q_inf: f64,
    pub p_imm: f64,
    pub q_imm: f64,
    pub m_inf: f64,
    pub m_imm: f64,
    pub w: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFitArtifact {
    pub categories: Vec<CategoryEstimate>,
    pub objective_init: f64,
    pub objective: f64,
    pub mad: f64,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualArtifact {
    pub scenario: String,
    pub baseline: f64,
    pub scenario_total: f64,
    pub abs_delta: f64,
    pub rel_delta: Option<f64>,
    /// Auctions left out because a bidder's loser regret is singular.
    pub flagged: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub error: Option<String>,
    pub artifacts: Vec<String>,
    /// Inputs a report looked for and did not find.
    #[serde(default)]
    pub missing: Vec<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).estimating("json")?;
    fs::write(path, text + "\n").estimating(&path.display().to_string())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Output directory, artifact list and stage timings of one command.
pub struct Run {
    pub command: String,
    pub out: PathBuf,
    pub missing: Vec<String>,
    artifacts: Vec<String>,
    log: Vec<String>,
}

impl Run {
    pub fn new(command: &str, out: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&out).map_err(|e| CliError::Validation(format!("output directory {}: {e}", out.display())))?;
        Ok(Self { command: command.to_string(), out, missing: Vec::new(), artifacts: Vec::new(), log: Vec::new() })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.out.join(name)
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> CliResult<T>) -> CliResult<T> {
        let t0 = Instant::now();
        let r = f(self);
        let status = if r.is_ok() { "ok" } else { "failed" };
        self.log.push(format!("{name}\t{status}\t{:.6}s", t0.elapsed().as_secs_f64()));
        r
    }

    /// Manifest and log; called whether or not the command succeeded.
    pub fn finish(mut self, outcome: &CliResult<()>) -> CliResult<()> {
        let log = self.out.join("run.log");
        fs::write(&log, self.log.join("\n") + "\n").estimating("run.log")?;
        let manifest = Manifest {
            command: self.command.clone(),
            status: match outcome {
                Err(_) => "failed".into(),
                Ok(()) if !self.missing.is_empty() => "partial".into(),
                Ok(()) => "ok".into(),
            },
            error: outcome.as_ref().err().map(|e| e.to_string()),
            artifacts: std::mem::take(&mut self.artifacts),
            missing: std::mem::take(&mut self.missing),
        };
        write_json(&self.out.join("manifest.json"), &manifest)
    }
}
