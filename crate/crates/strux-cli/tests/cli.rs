use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use strux_cli::commands::KNOWN_KEYS;

fn strux(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strux")).args(args).env_remove("STRUX_OUT_DIR").output().expect("spawn strux")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let h = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect();
    (h, rows)
}

fn fit_fixture(out: &Path) {
    let o = strux(&["fit-auction", "--input", s(&fixture("two_auctions.csv")), "--seed", "3", "--out", s(out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fit_auction_writes_every_parameter() {
    let dir = tempfile::tempdir().unwrap();
    fit_fixture(dir.path());
    let v = json(&dir.path().join("auction_estimates.json"));
    let bidders = v["bidders"].as_array().unwrap();
    let ids: Vec<u64> = bidders.iter().map(|b| b["bidder_id"].as_u64().unwrap()).collect();
    assert_eq!(ids, [3, 5, 7, 9, 12]);
    for b in bidders {
        for k in ["alpha", "beta", "delta", "rho"] {
            assert!(b[k].as_f64().unwrap().is_finite(), "{k}");
        }
    }
    let auctions = v["auctions"].as_array().unwrap();
    assert_eq!(auctions.iter().map(|a| a["auction_id"].as_u64().unwrap()).collect::<Vec<_>>(), [101, 202]);
    for a in auctions {
        for k in ["tau", "gamma", "iota", "eta", "var_v", "var_w", "var_zeta1", "var_xi1", "var_zeta2", "var_xi2"] {
            assert!(a[k].as_f64().unwrap().is_finite(), "{k}");
        }
    }
    let lp = &v["log_posterior"];
    let parts: f64 = ["bids", "counts", "valuation", "auction_prior", "bidder_prior", "dirac"].iter().map(|k| lp[k].as_f64().unwrap()).sum();
    assert!((parts - lp["total"].as_f64().unwrap()).abs() < 1e-9);
    assert!(lp["total"].as_f64().unwrap() >= v["initial_log_posterior"].as_f64().unwrap());
    let (h, rows) = csv_rows(&dir.path().join("valuations.csv"));
    assert_eq!(h, ["auction_id", "bid_index", "bidder_id", "valuation"]);
    assert_eq!(rows.len(), 11);
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert!(fs::read_to_string(dir.path().join("run.log")).unwrap().contains("mcem fit\tok"));
}

#[test]
fn missing_input_is_a_validation_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = strux(&["fit-auction", "--input", s(&missing), "--seed", "1", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(s(&missing)), "{err}");
}

#[test]
fn config_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    for args in [
        vec!["simulate", "--kind", "diffusion", "--out", out],
        vec!["simulate", "--kind", "tea", "--seed", "1", "--out", out],
        vec!["simulate", "--kind", "diffusion", "--seed", "1", "--set", "auction.iterations=3", "--out", out],
        vec!["simulate", "--kind", "diffusion", "--seed", "x", "--out", out],
        vec!["no-such-command"],
    ] {
        let o = strux(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = strux(&["simulate", "--kind", "diffusion", "--seed", "7", "--out", s(d.path())]);
        assert!(o.status.success());
    }
    for f in ["adoption.csv", "truth.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let (h, rows) = csv_rows(&a.path().join("adoption.csv"));
    assert_eq!(h, ["category_id", "day", "cumulative_adopters"]);
    assert_eq!(rows.len(), 200);
}

#[test]
fn config_file_and_overrides_merge() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "seed = 7\nsimulate.kind = diffusion\nsimulate.periods = 12\noutput.dir = out\n").unwrap();
    let o = strux(&["simulate", "--config", s(&conf), "--set", "simulate.periods=9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&dir.path().join("out").join("adoption.csv"));
    assert_eq!(rows.len(), 9);
}

#[test]
fn report_totals_equal_row_sums() {
    let dir = tempfile::tempdir().unwrap();
    fit_fixture(dir.path());
    let est = dir.path().join("auction_estimates.json");
    let o = strux(&[
        "counterfactual",
        "--scenario",
        "regret-winner",
        "--auction",
        s(&fixture("two_auctions.csv")),
        "--estimates",
        s(&est),
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = strux(&["report", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (_, rows) = csv_rows(&dir.path().join("counterfactual_rows.csv"));
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["auction 101", "auction 202"]);
    let col = |k: usize| rows.iter().map(|r| r[k].parse::<f64>().unwrap()).sum::<f64>();
    let (_, summary) = csv_rows(&dir.path().join("counterfactual_summary.csv"));
    assert_eq!(summary.len(), 1);
    let num = |k: usize| summary[0][k].parse::<f64>().unwrap();
    assert!((num(1) - col(1)).abs() < 1e-10);
    assert!((num(2) - col(2)).abs() < 1e-10);
    assert!((num(3) - col(3)).abs() < 1e-10);
    let cf = json(&dir.path().join("counterfactual.json"));
    assert!((cf["baseline"].as_f64().unwrap() - col(1)).abs() < 1e-10);

    let (h, ps) = csv_rows(&dir.path().join("parameter_summary.csv"));
    assert_eq!(h, ["parameter", "mean", "median", "sd", "min", "max", "n"]);
    let alpha = ps.iter().find(|r| r[0] == "auction.alpha").unwrap();
    assert_eq!(alpha[6], "5");
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["status"], "partial");
    assert!(m["missing"].as_array().unwrap().iter().any(|x| x == "chains.csv"));
}

#[test]
fn empty_chains_give_header_only_summary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("chains.csv"), "draw,alpha,mean_x1\n").unwrap();
    let o = strux(&["report", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("chain_summary.csv")).unwrap();
    assert_eq!(text, "parameter,mean,median,sd,min,max,n\n");
    let text = fs::read_to_string(dir.path().join("significance.csv")).unwrap();
    assert_eq!(text, "coefficient,positive,negative,null,units\n");
    assert_eq!(json(&dir.path().join("manifest.json"))["status"], "partial");
}

#[test]
fn significance_rows_sum_to_unit_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = strux(&["simulate", "--kind", "choice", "--seed", "2", "--set", "simulate.units=20", "--set", "simulate.periods=8", "--out", out]);
    assert!(o.status.success());
    let choice = dir.path().join("choice.csv");
    let o = strux(&[
        "fit-choice", "--input", s(&choice), "--seed", "1", "--set", "dpmix.burn_in=20", "--set", "dpmix.draws=100", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = strux(&["report", "--out", out]);
    assert!(o.status.success());
    let (_, rows) = csv_rows(&dir.path().join("significance.csv"));
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let n: Vec<usize> = r[1..].iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(n[0] + n[1] + n[2], 20);
        assert_eq!(n[3], 20);
    }
    let (_, chain) = csv_rows(&dir.path().join("chain_summary.csv"));
    assert_eq!(chain.len(), 4);
    assert!(chain.iter().all(|r| r[6] == "100"));
}

#[test]
fn reference_config_lists_every_known_key() {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("config/reference.conf")).unwrap();
    let listed: Vec<&str> = text
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once(" ="))
        .map(|(k, _)| k.trim())
        .filter(|k| !k.contains(' '))
        .collect();
    for k in KNOWN_KEYS {
        assert!(listed.contains(k), "{k} missing from reference.conf");
    }
    for k in &listed {
        assert!(KNOWN_KEYS.contains(k), "{k} is not a known key");
    }
}
