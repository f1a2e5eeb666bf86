//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O error, 2 invalid configuration, 3 solver
//! failure, 4 trivial test, 5 verification failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{ConfigError, OutputFormat, RunConfig};
use crate::design::{
    design_test, DesignError, DesignOptions, DesignProblem, Regularization, StateThresholds, TestPolicy,
};
use crate::grid::{build_grid, GridError};
use crate::io::{self, DesignRecord, IoError, LoadedDesign};
use crate::kernels::{build_kernel, KernelError, MeasureTag};
use crate::models::Hypothesis;
use crate::simulate::{self, SimError, WaldForm};
use crate::verify::{self, VerifyError, VerifySettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_TRIVIAL: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

pub const VERIFICATION_FILE: &str = "verification.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const COST_FIGURE: &str = "figure_costs.csv";
pub const THRESHOLD_FIGURE: &str = "figure_thresholds.csv";

#[derive(Debug, Parser)]
#[command(name = "optseq", version, about = "Design, verify and simulate optimal sequential tests")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for artifacts; overrides `[output] directory`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Simulation seed; overrides `[sim] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the design program and write design.json, rho.csv, thresholds.csv.
    Design,
    /// Check a written design against the oracle suite.
    Verify,
    /// Monte Carlo evaluation of one policy under H0 and H1.
    Simulate {
        #[arg(long, value_enum, default_value_t = PolicySource::Optimal)]
        policy: PolicySource,
    },
    /// Simulate the designed test and Wald's test side by side.
    Compare,
    /// Write plot-ready CSVs of the cost curves and thresholds.
    ExportFigures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicySource {
    Optimal,
    Wald,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Trivial(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Trivial(_) => EXIT_TRIVIAL,
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::TrivialTest { .. } => CliError::Trivial(e.to_string()),
            DesignError::InvalidGamma(_)
            | DesignError::Regularization(_)
            | DesignError::Grid(_)
            | DesignError::Kernel(_)
            | DesignError::WrongMeasure(_) => CliError::Config(e.to_string()),
            DesignError::Lp { .. } | DesignError::Repair(_) | DesignError::Linsolve(_) => CliError::Solver(e.to_string()),
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Length { .. } | VerifyError::GridMismatch => CliError::Config(e.to_string()),
            _ => CliError::Verification(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(dir) = &cli.output_dir {
        config.output.directory = dir.clone();
    }
    if let Some(seed) = cli.seed {
        config.sim.seed = seed;
    }
    Ok(config)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    match cli.command {
        Command::Design => cmd_design(&config),
        Command::Verify => cmd_verify(&config),
        Command::Simulate { policy } => cmd_simulate(&config, policy),
        Command::Compare => cmd_compare(&config),
        Command::ExportFigures => cmd_export_figures(&config),
    }
}

fn design_problem(config: &RunConfig) -> Result<DesignProblem, CliError> {
    let mut problem = DesignProblem::new(&config.model, &config.grid, config.gamma)?;
    problem.regularization = config.regularization.map(|c| Regularization { c, eta: None });
    Ok(problem)
}

fn cmd_design(config: &RunConfig) -> Result<(), CliError> {
    let problem = design_problem(config)?;
    let opts = DesignOptions {
        tol: config.lp.tol,
        max_iters: config.lp.max_iters,
        route: config.route,
        ..DesignOptions::default()
    };
    let sol = design_test(&problem, &opts)?;
    let record = DesignRecord::new(&config.model, &config.grid, config.regularization, &sol);
    let dir = &config.output.directory;
    io::write_design(dir, &record, &sol)?;

    let g = &sol.grid;
    println!(
        "model {:?}, grid {} x {} ({} cells), route {:?}, status {}",
        g.kind(),
        g.m_z(),
        g.m_theta(),
        g.num_cells(),
        sol.report.route,
        sol.report.status
    );
    println!("lambda0 = {}", sol.lambda.0);
    println!("lambda1 = {}", sol.lambda.1);
    println!("E0[tau] = {}", sol.expected_run_length);
    println!("bellman residual = {:e}", sol.report.bellman_residual);
    for w in &sol.warnings {
        println!("warning: {w}");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn load_design(config: &RunConfig) -> Result<LoadedDesign, CliError> {
    let design = io::read_design(&config.output.directory)?;
    let r = &design.record;
    if r.model != config.model || r.gamma != config.gamma || r.grid.spec != config.grid {
        return Err(CliError::Config(format!(
            "the design in {} was produced with a different model, targets or grid",
            config.output.directory.display()
        )));
    }
    Ok(design)
}

fn cmd_verify(config: &RunConfig) -> Result<(), CliError> {
    let design = load_design(config)?;
    let grid = Arc::new(build_grid(&config.model, &config.grid, config.gamma)?);
    let k0 = build_kernel(&config.model, grid.clone(), MeasureTag::P0)?;
    let k1 = build_kernel(&config.model, grid, MeasureTag::P1)?;
    let report = verify::verify_design(
        &k0,
        &k1,
        design.record.lambda,
        config.gamma,
        &design.rho_values(),
        &design.regions(),
        &VerifySettings::default(),
    )?;
    io::write_json(&config.output.directory.join(VERIFICATION_FILE), &report)?;
    println!("{:<32} {:>14} {:>14} {:>11}  result", "check", "value", "target", "tolerance");
    for c in &report.checks {
        println!(
            "{:<32} {:>14.8} {:>14.8} {:>11.3e}  {}",
            c.name,
            c.value,
            c.target,
            c.tolerance,
            if c.passed { "PASS" } else { "FAIL" }
        );
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}

fn wald(config: &RunConfig, form: WaldForm) -> Result<TestPolicy, CliError> {
    Ok(simulate::wald_thresholds(config.gamma, form)?)
}

#[derive(Debug, Serialize)]
struct SimulationOutput {
    policy: String,
    upper: f64,
    lower: f64,
    under_h0: simulate::SimulationReport,
    under_h1: simulate::SimulationReport,
}

#[derive(Debug, Serialize)]
struct SimulationCsvRow<'a> {
    policy: &'a str,
    truth: Hypothesis,
    runs: u64,
    decided: u64,
    errors: u64,
    empirical_error: f64,
    error_ci_low: Option<f64>,
    error_ci_high: Option<f64>,
    mean_run_length: f64,
    run_length_ci_low: Option<f64>,
    run_length_ci_high: Option<f64>,
    censored: u64,
    unreliable: bool,
}

fn cmd_simulate(config: &RunConfig, source: PolicySource) -> Result<(), CliError> {
    let (name, policy) = match source {
        PolicySource::Optimal => ("optimal", load_design(config)?.policy()),
        PolicySource::Wald => ("wald", wald(config, config.sim.wald_form)?),
    };
    let s = &config.sim;
    let h0 = simulate::monte_carlo(&policy, &config.model, Hypothesis::H0, s.runs, s.seed, s.max_samples)?;
    let h1 = simulate::monte_carlo(&policy, &config.model, Hypothesis::H1, s.runs, s.seed, s.max_samples)?;
    let (upper, lower) = policy
        .thresholds(config.model.theta0())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let dir = &config.output.directory;
    fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.clone(),
        source,
    })?;
    let stem = format!("simulation_{name}");
    if config.output.formats.contains(&OutputFormat::Csv) {
        let rows: Vec<SimulationCsvRow> = [&h0, &h1]
            .into_iter()
            .map(|r| SimulationCsvRow {
                policy: name,
                truth: r.truth,
                runs: r.runs,
                decided: r.decided,
                errors: r.errors,
                empirical_error: r.empirical_error,
                error_ci_low: r.error_ci.map(|c| c.0),
                error_ci_high: r.error_ci.map(|c| c.1),
                mean_run_length: r.mean_run_length,
                run_length_ci_low: r.run_length_ci.map(|c| c.0),
                run_length_ci_high: r.run_length_ci.map(|c| c.1),
                censored: r.censored_count,
                unreliable: r.unreliable,
            })
            .collect();
        io::write_csv(&dir.join(format!("{stem}.csv")), &rows)?;
    }
    for r in [&h0, &h1] {
        println!(
            "{name} under {:?}: error {:.5} ± {:.5}, E[tau] {:.4} ± {:.4}, censored {}{}",
            r.truth,
            r.empirical_error,
            r.error_std_err,
            r.mean_run_length,
            r.run_length_std_err,
            r.censored_count,
            if r.unreliable { " (unreliable)" } else { "" }
        );
    }
    if config.output.formats.contains(&OutputFormat::Json) {
        let out = SimulationOutput {
            policy: name.into(),
            upper,
            lower,
            under_h0: h0,
            under_h1: h1,
        };
        io::write_json(&dir.join(format!("{stem}.json")), &out)?;
    }
    Ok(())
}

fn cmd_compare(config: &RunConfig) -> Result<(), CliError> {
    let optimal = load_design(config)?.policy();
    let policies = vec![
        ("optimal".to_string(), optimal),
        ("wald".to_string(), wald(config, config.sim.wald_form)?),
    ];
    let s = &config.sim;
    let table = simulate::compare(&policies, &config.model, s.runs, s.seed, s.max_samples)?;
    let dir = &config.output.directory;
    if config.output.formats.contains(&OutputFormat::Csv) {
        let path = dir.join(COMPARISON_CSV);
        let mut buf = Vec::new();
        table
            .write_csv(&mut buf)
            .and_then(|_| fs::write(&path, buf))
            .map_err(|source| IoError::Io { path, source })?;
    }
    if config.output.formats.contains(&OutputFormat::Json) {
        io::write_json(&dir.join(COMPARISON_JSON), &table)?;
    }
    println!("{:<8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7}", "policy", "A", "B", "alpha0", "alpha1", "E0[tau]", "ratio");
    for r in &table.rows {
        println!(
            "{:<8} {:>9.4} {:>9.4} {:>9.5} {:>9.5} {:>9.4} {:>7.4}",
            r.name, r.upper, r.lower, r.under_h0.empirical_error, r.under_h1.empirical_error, r.under_h0.mean_run_length, r.ratio
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CostPoint {
    theta: Option<f64>,
    s: f64,
    g: f64,
    d: f64,
    rho: f64,
}

#[derive(Debug, Serialize)]
struct ThresholdPoint {
    theta: Option<f64>,
    #[serde(rename = "A")]
    upper: f64,
    #[serde(rename = "B")]
    lower: f64,
    wald_a: f64,
    wald_b: f64,
}

fn threshold_points(t: &StateThresholds, wald: (f64, f64)) -> Vec<ThresholdPoint> {
    io::threshold_rows(t)
        .into_iter()
        .map(|r| ThresholdPoint {
            theta: r.theta,
            upper: r.upper,
            lower: r.lower,
            wald_a: wald.0,
            wald_b: wald.1,
        })
        .collect()
}

fn cmd_export_figures(config: &RunConfig) -> Result<(), CliError> {
    let design = load_design(config)?;
    let dir: &Path = &config.output.directory;
    let costs: Vec<CostPoint> = design
        .rho
        .iter()
        .map(|r| CostPoint {
            theta: r.theta,
            s: r.s,
            g: r.g,
            d: r.d,
            rho: r.rho,
        })
        .collect();
    io::write_csv(&dir.join(COST_FIGURE), &costs)?;
    let TestPolicy::Constant { upper, lower } = wald(config, WaldForm::Classical)? else {
        unreachable!("Wald thresholds are constant")
    };
    io::write_csv(&dir.join(THRESHOLD_FIGURE), &threshold_points(&design.thresholds, (upper, lower)))?;
    println!("wrote {} and {}", dir.join(COST_FIGURE).display(), dir.join(THRESHOLD_FIGURE).display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.ini");
        fs::write(&path, body).unwrap();
        path
    }

    const IID: &str = "[model]\ntype = iid\nmu = 1\nsigma = 1\n[design]\ngamma0 = 0.1\ngamma1 = 0.1\n[grid]\nm_z = 201\n[sim]\nruns = 200\n";

    fn run_in(dir: &Path, config: &Path, sub: &[&str]) -> i32 {
        let mut args = vec!["optseq".to_string()];
        args.extend(sub.iter().map(|s| s.to_string()));
        args.extend([
            "--config".into(),
            config.display().to_string(),
            "--output-dir".into(),
            dir.join("out").display().to_string(),
        ]);
        run(args)
    }

    #[test]
    fn exit_codes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), IID);
        assert_eq!(run_in(tmp.path(), &cfg, &["verify"]), EXIT_IO);
        assert_eq!(run_in(tmp.path(), &cfg, &["design"]), EXIT_OK);
        assert_eq!(run_in(tmp.path(), &cfg, &["verify"]), EXIT_OK);
        // A coarse grid misses the finite-difference oracle.
        let coarse = write_config(tmp.path(), &IID.replace("m_z = 201", "m_z = 41"));
        assert_eq!(run_in(tmp.path(), &coarse, &["design"]), EXIT_OK);
        assert_eq!(run_in(tmp.path(), &coarse, &["verify"]), EXIT_VERIFY);

        let bad = write_config(tmp.path(), &IID.replace("gamma0 = 0.1", "gamma0 = 2"));
        assert_eq!(run_in(tmp.path(), &bad, &["design"]), EXIT_CONFIG);
        let lax = write_config(tmp.path(), &IID.replace("0.1", "0.49"));
        assert_eq!(run_in(tmp.path(), &lax, &["design"]), EXIT_TRIVIAL);
        let starved = write_config(tmp.path(), &format!("{IID}[lp]\nmax_iters = 2\n"));
        assert_eq!(run_in(tmp.path(), &starved, &["design"]), EXIT_SOLVER);
        assert_eq!(run(["optseq", "design"]), EXIT_CONFIG);
        assert_eq!(run(["optseq", "frobnicate"]), EXIT_CONFIG);
    }

    #[test]
    fn design_mismatch_is_a_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path(), IID);
        assert_eq!(run_in(tmp.path(), &cfg, &["design"]), EXIT_OK);
        let other = write_config(tmp.path(), &IID.replace("m_z = 201", "m_z = 203"));
        assert_eq!(run_in(tmp.path(), &other, &["verify"]), EXIT_CONFIG);
    }
}
