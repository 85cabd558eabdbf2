//! `strux` command-line pipelines: simulate data, fit the models, run
//! counterfactuals and summarize the results.
//!
//! Settings come from an optional `key = value` config file, then `--set`
//! overrides, then the dedicated flags. Every command writes `run.log` and
//! `manifest.json` next to its artifacts. Exit status is 0 on success, 1 when
//! estimation fails and 2 for bad configuration or input.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use artifacts::Run;
use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "strux", version, about = "Structural estimation pipelines")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to $STRUX_OUT_DIR, then ./strux-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override any config key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic data set.
    Simulate {
        /// diffusion, choice, auction or gamification.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Gaussian mixture with the number of clusters chosen by BIC.
    Cluster {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// MAP fit of the two-segment diffusion model.
    FitDiffusion {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Dirichlet-process mixed logit on a choice panel.
    FitChoice {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Regret auction model by Monte Carlo EM.
    FitAuction {
        #[arg(long)]
        input: Option<PathBuf>,
        /// CSV of bidder_id, segment; one segment when absent.
        #[arg(long)]
        segments: Option<PathBuf>,
    },
    /// Dirichlet-process mixed binomial logit on contribution logs.
    FitGamification {
        #[arg(long)]
        activity: Option<PathBuf>,
        #[arg(long)]
        leaderboard: Option<PathBuf>,
        #[arg(long)]
        badges: Option<PathBuf>,
    },
    /// Re-simulate outcomes under a policy change.
    Counterfactual {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        estimates: Option<PathBuf>,
        #[arg(long)]
        auction: Option<PathBuf>,
        #[arg(long)]
        activity: Option<PathBuf>,
        #[arg(long)]
        leaderboard: Option<PathBuf>,
        #[arg(long)]
        badges: Option<PathBuf>,
    },
    /// Summary tables from a directory of artifacts.
    Report {
        /// Defaults to the output directory.
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Cluster { .. } => "cluster",
            Command::FitDiffusion { .. } => "fit-diffusion",
            Command::FitChoice { .. } => "fit-choice",
            Command::FitAuction { .. } => "fit-auction",
            Command::FitGamification { .. } => "fit-gamification",
            Command::Counterfactual { .. } => "counterfactual",
            Command::Report { .. } => "report",
        }
    }

    /// Flag values as config entries.
    fn flags(&self) -> Vec<(&'static str, String)> {
        fn p(key: &'static str, v: &Option<PathBuf>) -> Option<(&'static str, String)> {
            v.as_ref().map(|x| (key, x.display().to_string()))
        }
        fn s(key: &'static str, v: &Option<String>) -> Option<(&'static str, String)> {
            v.as_ref().map(|x| (key, x.clone()))
        }
        let v = match self {
            Command::Simulate { kind } => vec![s("simulate.kind", kind)],
            Command::Cluster { input } => vec![p("input.data", input)],
            Command::FitDiffusion { input } => vec![p("input.adoption", input)],
            Command::FitChoice { input } => vec![p("input.choice", input)],
            Command::FitAuction { input, segments } => vec![p("input.auction", input), p("input.segments", segments)],
            Command::FitGamification { activity, leaderboard, badges } => {
                vec![p("input.activity", activity), p("input.leaderboard", leaderboard), p("input.badges", badges)]
            }
            Command::Counterfactual { scenario, estimates, auction, activity, leaderboard, badges } => vec![
                s("counterfactual.scenario", scenario),
                p("input.estimates", estimates),
                p("input.auction", auction),
                p("input.activity", activity),
                p("input.leaderboard", leaderboard),
                p("input.badges", badges),
            ],
            Command::Report { input_dir } => vec![p("input.dir", input_dir)],
        };
        v.into_iter().flatten().collect()
    }
}

/// Merged configuration: file, then `--set`, then flags.
pub fn build_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.set)?;
    if let Some(s) = cli.seed {
        cfg.set("seed", s.to_string())?;
    }
    if let Some(o) = &cli.out {
        cfg.set("output.dir", o.display().to_string())?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", t.to_string())?;
    }
    for (k, v) in cli.command.flags() {
        cfg.set(k, v)?;
    }
    cfg.check_known(commands::KNOWN_KEYS)?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = build_config(cli)?;
    if let Some(t) = cfg.raw("threads") {
        let n: usize = t.parse().map_err(|_| CliError::Validation(format!("threads: cannot parse '{t}'")))?;
        strux::par::init_threads(n);
    }
    let mut run = Run::new(cli.command.name(), cfg.output_dir())?;
    let outcome = match &cli.command {
        Command::Simulate { .. } => commands::simulate(&cfg, &mut run),
        Command::Cluster { .. } => commands::cluster(&cfg, &mut run),
        Command::FitDiffusion { .. } => commands::fit_diffusion(&cfg, &mut run),
        Command::FitChoice { .. } => commands::fit_choice(&cfg, &mut run),
        Command::FitAuction { .. } => commands::fit_auction_cmd(&cfg, &mut run),
        Command::FitGamification { .. } => commands::fit_gamification(&cfg, &mut run),
        Command::Counterfactual { .. } => commands::counterfactual(&cfg, &mut run),
        Command::Report { .. } => run.stage("report", |run| report::report(&cfg, run)),
    };
    run.finish(&outcome)?;
    outcome
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("strux {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
