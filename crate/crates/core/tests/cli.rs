//! End-to-end runs of the `optseq` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use optseq::io::{read_csv, RhoRow, ThresholdRow};

const IID: &str = "\
[model]
type = iid
mu = 1
sigma = 1

[design]
gamma0 = 0.1
gamma1 = 0.1

[grid]
m_z = 201
beta = 0.5

[sim]
runs = 2000
seed = 3
";

const CHAIN: &str = "\
[model]
type = chain
sigma = 1
p0 = 0.5, 0.5
p1 = 0.8, 0.2; 0.2, 0.8

[design]
gamma0 = 0.05
gamma1 = 0.05

[grid]
m_z = 101
";

const AR1: &str = "\
[model]
type = ar1
a0 = 0
a1 = 1
sigma = 1

[design]
gamma0 = 0.1
gamma1 = 0.1

[grid]
m_z = 31
m_theta = 21

[sim]
runs = 10
";

struct Run {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("run.ini");
        fs::write(&path, config).unwrap();
        let out = tmp.path().join("out");
        Self {
            _tmp: tmp,
            config: path,
            out,
        }
    }

    fn exec(&self, args: &[&str]) -> Output {
        exec_in(&self.config, &self.out, args)
    }
}

fn exec_in(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optseq"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn design_writes_three_files_deterministically() {
    let run = Run::new(IID);
    let first = run.exec(&["design"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("E0[tau]"));
    let names = ["design.json", "rho.csv", "thresholds.csv"];
    let before: Vec<Vec<u8>> = names.iter().map(|n| fs::read(run.out.join(n)).unwrap()).collect();
    assert_eq!(code(&run.exec(&["design"])), 0);
    for (n, b) in names.iter().zip(&before) {
        assert_eq!(&fs::read(run.out.join(n)).unwrap(), b, "{n} changed between runs");
    }
    let json: serde_json::Value = serde_json::from_slice(&before[0]).unwrap();
    for key in ["lambda", "expected_run_length", "gamma", "grid", "warnings", "solver"] {
        assert!(json.get(key).is_some(), "design.json lacks {key}");
    }
}

#[test]
fn verify_passes_then_catches_a_corrupted_cell() {
    let run = Run::new(IID);
    assert_eq!(code(&run.exec(&["design"])), 0);
    let ok = run.exec(&["verify"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.out.join("verification.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "fd_derivative_lambda0"));

    // Zero the ρ value of the anchor cell.
    let path = run.out.join("rho.csv");
    let mut rows: Vec<RhoRow> = read_csv(&path).unwrap();
    rows[100].rho = 0.0;
    optseq::io::write_csv(&path, &rows).unwrap();
    let bad = run.exec(&["verify"]);
    assert_eq!(code(&bad), 5);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.out.join("verification.json")).unwrap()).unwrap();
    let bellman = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "bellman_residual")
        .unwrap()
        .clone();
    assert_eq!(bellman["passed"], false);
}

#[test]
fn missing_design_is_an_io_error() {
    let run = Run::new(IID);
    for sub in [&["verify"][..], &["simulate"], &["compare"], &["export-figures"]] {
        let o = run.exec(sub);
        assert_eq!(code(&o), 1, "{sub:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("design.json"));
    }
}

#[test]
fn invalid_config_reports_the_line() {
    let run = Run::new(&IID.replace("gamma0 = 0.1", "gamma0 = 1.2"));
    let o = run.exec(&["design"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 7"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_smoke_and_seed_echo() {
    let run = Run::new(AR1);
    let start = Instant::now();
    let o = run.exec(&["simulate", "--policy", "wald", "--seed", "99"]);
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.out.join("simulation_wald.json")).unwrap()).unwrap();
    assert_eq!(report["under_h0"]["seed"], 99);
    assert_eq!(report["under_h1"]["runs"], 10);
    let csv = fs::read_to_string(run.out.join("simulation_wald.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    // Same seed, same report.
    let again = run.exec(&["simulate", "--policy", "wald", "--seed", "99"]);
    assert_eq!(stdout(&o), stdout(&again));
}

#[test]
fn compare_and_simulate_optimal() {
    let run = Run::new(IID);
    assert_eq!(code(&run.exec(&["design"])), 0);
    assert_eq!(code(&run.exec(&["simulate"])), 0);
    assert!(run.out.join("simulation_optimal.json").exists());
    let o = run.exec(&["compare"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(run.out.join("comparison.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("policy,A,B,alpha0,alpha1,e0_tau,ratio"));
    assert!(lines.next().unwrap().starts_with("optimal,"));
    assert!(lines.next().unwrap().starts_with("wald,"));
}

/// Interpolated zeros of `g − d` along one θ row, as in threshold extraction.
fn crossings(rows: &[&RhoRow]) -> Vec<f64> {
    let f: Vec<f64> = rows.iter().map(|r| r.g - r.d).collect();
    let mut out = Vec::new();
    for i in 0..rows.len() - 1 {
        if (f[i] > 0.0) != (f[i + 1] > 0.0) {
            let w = (f[i] / (f[i] - f[i + 1])).clamp(0.0, 1.0);
            out.push(rows[i].s + w * (rows[i + 1].s - rows[i].s));
        }
    }
    out
}

#[derive(serde::Deserialize)]
struct CostPoint {
    theta: Option<f64>,
    s: f64,
    g: f64,
    d: f64,
    rho: f64,
}

#[test]
fn iid_figure_crossings_match_thresholds() {
    let run = Run::new(IID);
    assert_eq!(code(&run.exec(&["design"])), 0);
    assert_eq!(code(&run.exec(&["export-figures"])), 0);
    let costs: Vec<CostPoint> = read_csv(&run.out.join("figure_costs.csv")).unwrap();
    assert!(costs.iter().all(|c| c.theta.is_none() && c.rho <= c.g.min(c.d) + 1e-9));
    let rows: Vec<RhoRow> = costs
        .iter()
        .enumerate()
        .map(|(j, c)| RhoRow {
            cell: j,
            s: c.s,
            theta: None,
            rho: c.rho,
            g: c.g,
            d: c.d,
            mask: optseq::design::Region::Continue,
        })
        .collect();
    let x = crossings(&rows.iter().collect::<Vec<_>>());
    let t: Vec<ThresholdRow> = read_csv(&run.out.join("thresholds.csv")).unwrap();
    assert_eq!(x.len(), 2, "{x:?}");
    assert!((x[0] - t[0].lower).abs() <= 1e-9, "{} vs {}", x[0], t[0].lower);
    assert!((x[1] - t[0].upper).abs() <= 1e-9, "{} vs {}", x[1], t[0].upper);
}

#[test]
fn chain_figure_has_one_curve_per_state() {
    let run = Run::new(CHAIN);
    assert_eq!(code(&run.exec(&["design"])), 0);
    assert_eq!(code(&run.exec(&["export-figures"])), 0);
    let costs: Vec<CostPoint> = read_csv(&run.out.join("figure_costs.csv")).unwrap();
    for state in [1.0, 2.0] {
        assert_eq!(costs.iter().filter(|c| c.theta == Some(state)).count(), 101);
    }
    let t = fs::read_to_string(run.out.join("figure_thresholds.csv")).unwrap();
    assert_eq!(t.lines().count(), 3);
}

#[test]
fn ar1_threshold_figure_has_wald_columns() {
    let run = Run::new(AR1);
    assert_eq!(code(&run.exec(&["design"])), 0);
    assert_eq!(code(&run.exec(&["export-figures"])), 0);
    let t = fs::read_to_string(run.out.join("figure_thresholds.csv")).unwrap();
    let mut lines = t.lines();
    assert_eq!(lines.next(), Some("theta,A,B,wald_a,wald_b"));
    let wald_a = (0.9f64 / 0.1).ln();
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| (r[3] - wald_a).abs() < 1e-12 && (r[4] + wald_a).abs() < 1e-12));
}
