//! Decomposition of the design LP over the multipliers.
//!
//! For fixed `λ` the inner maximization over `ρ` is the discrete optimal
//! stopping problem, solved exactly by policy iteration. A fixed stopping
//! policy has cost `N + λ₀·a + λ₁·b`, linear in `λ`, and upper-bounds the
//! optimal cost at every other `λ`; each subproblem therefore yields a cut
//! on the concave value function. A small master LP over `(v, λ₀, λ₁)`
//! maximizes `v − γ·λ` under the cuts, and the loop stops when its bound
//! meets the best dual value found. At convergence the result is an optimal
//! solution of the full LP.

use crate::linsolve::{ContinuationSystem, LinsolveError, SolveOptions};
use crate::lp_core::{solve_lp, LinearProgram, LpStatus};
use crate::sparse::CscMatrix;

/// Policy and cost fields at a fixed `λ`.
pub(crate) struct PolicyFields {
    pub cont: Vec<bool>,
    pub rho: Vec<f64>,
    /// Expected run-length from each cell under the policy.
    pub run_length: Vec<f64>,
    /// Probability of stopping with H1 decided (coefficient of `λ₀`).
    pub coef0: Vec<f64>,
    /// Expected `z` on stopping with H0 decided (coefficient of `λ₁`).
    pub coef1: Vec<f64>,
}

pub(crate) fn stopping_cost(lambda: (f64, f64), z: &[f64]) -> Vec<f64> {
    z.iter().map(|&zj| lambda.0.min(lambda.1 * zj)).collect()
}

fn masked(v: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    v.iter().enumerate().map(|(i, &x)| if keep(i) { x } else { 0.0 }).collect()
}

/// Solves `x = b + Σ_C H x` on `C` with `b_j = 1{unit} + Σ_{i∉C} H_ij stop_i`
/// and `x = stop` off `C`.
fn evaluate(
    h: &CscMatrix,
    sys: &ContinuationSystem<'_>,
    cont: &[bool],
    stop_values: &[f64],
    unit: bool,
    guess: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<Vec<f64>, LinsolveError> {
    let off = masked(stop_values, |i| !cont[i]);
    let mut rhs = h.vec_mul(&off);
    if unit {
        rhs.iter_mut().for_each(|v| *v += 1.0);
    }
    let x = sys.solve(&rhs, guess, opts)?;
    Ok(x.iter().zip(&off).enumerate().map(|(i, (xi, oi))| if cont[i] { *xi } else { *oi }).collect())
}

/// Optimal stopping policy at `λ` by policy iteration, starting from `start`
/// (or from stopping everywhere).
pub(crate) fn optimal_policy(
    h: &CscMatrix,
    z: &[f64],
    lambda: (f64, f64),
    start: Option<Vec<bool>>,
    opts: &SolveOptions,
) -> Result<PolicyFields, LinsolveError> {
    let n = z.len();
    let g = stopping_cost(lambda, z);
    let mut cont = start.unwrap_or_else(|| vec![false; n]);
    let mut rho: Option<Vec<f64>> = None;
    for _ in 0..200 {
        let sys = ContinuationSystem::new(h, &cont);
        let r = evaluate(h, &sys, &cont, &g, true, rho.as_deref(), opts)?;
        let d: Vec<f64> = h.vec_mul(&r).into_iter().map(|v| v + 1.0).collect();
        // Switch action only on a strict improvement, to avoid flip-flopping
        // on ties.
        let next: Vec<bool> = (0..n)
            .map(|j| {
                let eps = 1e-11 * (1.0 + g[j]);
                if cont[j] {
                    g[j] >= d[j] - eps
                } else {
                    d[j] < g[j] - eps
                }
            })
            .collect();
        let changed = next != cont;
        rho = Some(r);
        if !changed {
            break;
        }
        cont = next;
    }
    let rho = rho.expect("at least one evaluation");
    let sys = ContinuationSystem::new(h, &cont);
    let decide_h1: Vec<bool> = z.iter().map(|&zj| lambda.0 <= lambda.1 * zj).collect();
    let zeros = vec![0.0; n];
    let ind_h1: Vec<f64> = (0..n).map(|j| if decide_h1[j] { 1.0 } else { 0.0 }).collect();
    let z_h0: Vec<f64> = (0..n).map(|j| if decide_h1[j] { 0.0 } else { z[j] }).collect();
    let run_length = evaluate(h, &sys, &cont, &zeros, true, None, opts)?;
    let coef0 = evaluate(h, &sys, &cont, &ind_h1, false, None, opts)?;
    let coef1 = evaluate(h, &sys, &cont, &z_h0, false, None, opts)?;
    Ok(PolicyFields {
        cont,
        rho,
        run_length,
        coef0,
        coef1,
    })
}

pub(crate) struct CutOutcome {
    pub lambda: (f64, f64),
    pub rho: Vec<f64>,
    /// Best dual value `w·ρ − γ·λ`.
    pub value: f64,
    /// Master-problem bound at termination.
    pub upper_bound: f64,
    pub cuts: usize,
    pub converged: bool,
    pub at_box: bool,
}

pub(crate) struct CutSettings {
    pub gap_tol: f64,
    pub max_cuts: usize,
    pub lambda_max: f64,
    pub lp_tol: f64,
}

/// Maximizes `w·ρ_λ − γ·λ` over `λ ∈ [0, λ_max]²`.
pub(crate) fn solve_by_cuts(
    h: &CscMatrix,
    z: &[f64],
    weights: &[f64],
    gamma: (f64, f64),
    settings: &CutSettings,
    opts: &SolveOptions,
) -> Result<CutOutcome, LinsolveError> {
    let dotw = |v: &[f64]| -> f64 { weights.iter().zip(v).map(|(a, b)| a * b).sum() };
    let mut lambda = (1.0 / gamma.0, 1.0 / gamma.1);
    let mut cuts: Vec<(f64, f64, f64)> = Vec::new();
    let mut best: Option<(f64, (f64, f64), Vec<f64>)> = None;
    let mut start: Option<Vec<bool>> = None;
    let mut upper = f64::INFINITY;
    for _ in 0..settings.max_cuts {
        let f = optimal_policy(h, z, lambda, start.take(), opts)?;
        let value = dotw(&f.rho) - gamma.0 * lambda.0 - gamma.1 * lambda.1;
        cuts.push((dotw(&f.run_length), dotw(&f.coef0), dotw(&f.coef1)));
        start = Some(f.cont);
        if best.as_ref().is_none_or(|b| value > b.0) {
            best = Some((value, lambda, f.rho));
        }
        let best_value = best.as_ref().map(|b| b.0).unwrap();

        // Master: max v − γ·λ s.t. v − a λ₀ − b λ₁ ≤ N per cut, λ ≤ λ_max.
        let mut lp = LinearProgram::new(3);
        lp.set_objective(0, 1.0).unwrap();
        lp.set_objective(1, -gamma.0).unwrap();
        lp.set_objective(2, -gamma.1).unwrap();
        for &(nv, a, b) in &cuts {
            lp.add_le(vec![(0, 1.0), (1, -a), (2, -b)], nv).unwrap();
        }
        lp.add_le(vec![(1, 1.0)], settings.lambda_max).unwrap();
        lp.add_le(vec![(2, 1.0)], settings.lambda_max).unwrap();
        let sol = solve_lp(&lp, settings.lp_tol, 10_000);
        if sol.status != LpStatus::Optimal {
            break;
        }
        upper = sol.objective_value;
        if upper - best_value <= settings.gap_tol * (1.0 + best_value.abs()) {
            let (value, lambda, rho) = best.unwrap();
            let at_box = lambda.0.max(lambda.1) >= settings.lambda_max * (1.0 - 1e-9);
            return Ok(CutOutcome {
                lambda,
                rho,
                value,
                upper_bound: upper,
                cuts: cuts.len(),
                converged: true,
                at_box,
            });
        }
        lambda = (sol.x[1], sol.x[2]);
    }
    let (value, lambda, rho) = best.expect("at least one cut");
    Ok(CutOutcome {
        lambda,
        rho,
        value,
        upper_bound: upper,
        cuts: cuts.len(),
        converged: false,
        at_box: false,
    })
}
