//! Monte Carlo execution of sequential test policies.
//!
//! Trial `k` of a run with seed `σ` draws from its own ChaCha8 stream
//! `(σ, k)`, so trials are independent of execution order and thread count;
//! per-trial outcomes are collected in index order and reduced sequentially.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{PolicyError, TestPolicy};
use crate::models::{Hypothesis, ModelError, ModelSpec};

/// Default per-trial sample cap.
pub const DEFAULT_MAX_SAMPLES: u64 = 100_000;

/// Reports whose censored fraction exceeds this are flagged unreliable.
pub const CENSORING_LIMIT: f64 = 0.01;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("target error probabilities must lie in (0, 1) with γ₀ + γ₁ < 1, got {0:?}")]
    InvalidGamma((f64, f64)),
    #[error("thresholds are not ordered: {0}")]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("at least {needed} {what} required, got {got}")]
    TooFew { what: &'static str, needed: usize, got: usize },
}

/// Labeling of Wald's approximate thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WaldForm {
    /// `A = ln((1−γ₁)/γ₀)`, `B = ln(γ₁/(1−γ₀))`.
    #[default]
    Classical,
    /// `A = ln(γ₁/(1−γ₀))`, `B = ln(γ₀/(1−γ₁))`, kept only for comparison;
    /// it yields two negative values for small targets and is rejected
    /// whenever `B < A` fails.
    Printed,
}

/// Wald's constant thresholds for target errors `γ`.
pub fn wald_thresholds(gamma: (f64, f64), form: WaldForm) -> Result<TestPolicy, SimError> {
    let (g0, g1) = gamma;
    let ok = |g: f64| g > 0.0 && g < 1.0;
    if !(ok(g0) && ok(g1) && g0 + g1 < 1.0) {
        return Err(SimError::InvalidGamma(gamma));
    }
    let (upper, lower) = match form {
        WaldForm::Classical => (((1.0 - g1) / g0).ln(), (g1 / (1.0 - g0)).ln()),
        WaldForm::Printed => ((g1 / (1.0 - g0)).ln(), (g0 / (1.0 - g1)).ln()),
    };
    let policy = TestPolicy::Constant { upper, lower };
    policy.validate()?;
    Ok(policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    /// `None` for censored trials.
    pub decision: Option<Hypothesis>,
    /// Number of observations consumed.
    pub tau: u64,
    pub censored: bool,
}

/// The random stream of trial `index` under `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs one test from `s = 0`, `θ = θ₀`, sampling under `truth` until the
/// log-LR leaves `(B(θ), A(θ))` or `max_samples` observations are used.
pub fn run_trial<R: rand::Rng + ?Sized>(
    policy: &TestPolicy,
    model: &ModelSpec,
    truth: Hypothesis,
    rng: &mut R,
    max_samples: u64,
) -> Result<TrialOutcome, SimError> {
    let mut s = 0.0;
    let mut theta = model.theta0();
    for n in 1..=max_samples {
        let x = model.sample_observation(truth, theta, rng)?;
        s += model.llr_increment(x, theta)?;
        theta = model.update_statistic(theta, x)?;
        if let Some(d) = policy.decide(s, theta)? {
            return Ok(TrialOutcome {
                decision: Some(d),
                tau: n,
                censored: false,
            });
        }
    }
    Ok(TrialOutcome {
        decision: None,
        tau: max_samples,
        censored: true,
    })
}

/// Runs the trials with the given indices, in parallel, returning outcomes
/// in the order of `indices`.
pub fn run_trials(
    policy: &TestPolicy,
    model: &ModelSpec,
    truth: Hypothesis,
    seed: u64,
    indices: &[u64],
    max_samples: u64,
) -> Result<Vec<TrialOutcome>, SimError> {
    indices
        .par_iter()
        .map(|&k| run_trial(policy, model, truth, &mut trial_rng(seed, k), max_samples))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub runs: u64,
    pub truth: Hypothesis,
    pub seed: u64,
    pub max_samples: u64,
    /// Trials that reached a decision.
    pub decided: u64,
    /// Decided trials whose decision differs from the truth.
    pub errors: u64,
    pub empirical_error: f64,
    pub error_std_err: f64,
    /// 95% normal-approximation interval, clamped to `[0, 1]`; `None` (no
    /// information) with fewer than two decided trials.
    pub error_ci: Option<(f64, f64)>,
    /// Mean run-length over decided trials.
    pub mean_run_length: f64,
    pub run_length_std_err: f64,
    pub run_length_ci: Option<(f64, f64)>,
    pub censored_count: u64,
    /// More than 1% of the trials were censored.
    pub unreliable: bool,
}

impl SimulationReport {
    /// Aggregates outcomes in the given order.
    pub fn from_outcomes(outcomes: &[TrialOutcome], truth: Hypothesis, seed: u64, max_samples: u64) -> Self {
        let runs = outcomes.len() as u64;
        let (mut decided, mut errors, mut censored) = (0u64, 0u64, 0u64);
        let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
        for o in outcomes {
            match o.decision {
                Some(d) => {
                    decided += 1;
                    if d != truth {
                        errors += 1;
                    }
                    let t = o.tau as f64;
                    sum += t;
                    sum_sq += t * t;
                }
                None => censored += 1,
            }
        }
        let n = decided as f64;
        let (p, p_se, mean, mean_se) = if decided == 0 {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let p = errors as f64 / n;
            let mean = sum / n;
            let var = if decided > 1 {
                ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                f64::NAN
            };
            (p, (p * (1.0 - p) / n).sqrt(), mean, (var / n).sqrt())
        };
        let informative = decided >= 2;
        Self {
            runs,
            truth,
            seed,
            max_samples,
            decided,
            errors,
            empirical_error: p,
            error_std_err: p_se,
            error_ci: informative.then(|| ((p - Z95 * p_se).max(0.0), (p + Z95 * p_se).min(1.0))),
            mean_run_length: mean,
            run_length_std_err: mean_se,
            run_length_ci: informative.then(|| (mean - Z95 * mean_se, mean + Z95 * mean_se)),
            censored_count: censored,
            unreliable: censored as f64 > CENSORING_LIMIT * runs as f64,
        }
    }
}

/// Runs `runs` independent trials under `truth`.
pub fn monte_carlo(
    policy: &TestPolicy,
    model: &ModelSpec,
    truth: Hypothesis,
    runs: u64,
    seed: u64,
    max_samples: u64,
) -> Result<SimulationReport, SimError> {
    if runs == 0 {
        return Err(SimError::TooFew {
            what: "runs",
            needed: 1,
            got: 0,
        });
    }
    policy.validate()?;
    let indices: Vec<u64> = (0..runs).collect();
    let outcomes = run_trials(policy, model, truth, seed, &indices, max_samples)?;
    Ok(SimulationReport::from_outcomes(&outcomes, truth, seed, max_samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    /// Thresholds at the initial statistic.
    pub upper: f64,
    pub lower: f64,
    pub under_h0: SimulationReport,
    pub under_h1: SimulationReport,
    /// Mean run-length under H0 of the first policy divided by this one's.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    /// `ratios[i][j]` = mean H0 run-length of policy `i` over that of `j`.
    pub ratios: Vec<Vec<f64>>,
}

impl ComparisonTable {
    /// CSV with columns `policy,A,B,alpha0,alpha1,e0_tau,ratio`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "policy,A,B,alpha0,alpha1,e0_tau,ratio")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.name, r.upper, r.lower, r.under_h0.empirical_error, r.under_h1.empirical_error, r.under_h0.mean_run_length, r.ratio
            )?;
        }
        Ok(())
    }
}

/// Simulates every policy under both hypotheses with common random numbers.
pub fn compare(
    policies: &[(String, TestPolicy)],
    model: &ModelSpec,
    runs: u64,
    seed: u64,
    max_samples: u64,
) -> Result<ComparisonTable, SimError> {
    if policies.len() < 2 {
        return Err(SimError::TooFew {
            what: "policies",
            needed: 2,
            got: policies.len(),
        });
    }
    let mut rows = Vec::with_capacity(policies.len());
    for (name, policy) in policies {
        let under_h0 = monte_carlo(policy, model, Hypothesis::H0, runs, seed, max_samples)?;
        let under_h1 = monte_carlo(policy, model, Hypothesis::H1, runs, seed, max_samples)?;
        let (upper, lower) = policy.thresholds(model.theta0())?;
        rows.push(ComparisonRow {
            name: name.clone(),
            upper,
            lower,
            under_h0,
            under_h1,
            ratio: f64::NAN,
        });
    }
    let e: Vec<f64> = rows.iter().map(|r| r.under_h0.mean_run_length).collect();
    for (r, ej) in rows.iter_mut().zip(&e) {
        r.ratio = e[0] / ej;
    }
    let ratios = e.iter().map(|ei| e.iter().map(|ej| ei / ej).collect()).collect();
    Ok(ComparisonTable { rows, ratios })
}
