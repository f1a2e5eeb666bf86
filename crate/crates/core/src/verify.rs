//! Independent oracles for designed tests.
//!
//! Everything here is computed from the kernels and a candidate `(λ, ρ)` or
//! stop/continue partition alone, never from LP internals: value iteration
//! of the Bellman operator, Fredholm equations for the error probabilities
//! and for the derivatives of the cost in `λ`, the dual objective and its
//! finite-difference derivative, the run-length equation and the
//! sublinearity bounds of the cost in the likelihood ratios.

use serde::{Deserialize, Serialize};

use crate::design::Region;
use crate::kernels::{KernelError, MeasureTag, TransitionKernel};
use crate::linsolve::{ContinuationSystem, LinsolveError, SolveOptions};
use crate::models::Hypothesis;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("multipliers must be finite and nonnegative, got {0:?}")]
    InvalidLambda((f64, f64)),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("value iteration increased cell {cell} by {increase:e} at sweep {iteration}")]
    NotMonotone { iteration: usize, cell: usize, increase: f64 },
    #[error("value iteration did not converge in {iterations} sweeps (last change {delta:e})")]
    NotConverged { iterations: usize, delta: f64 },
    #[error("expected a kernel under {expected:?}, got {found:?}")]
    WrongMeasure { expected: MeasureTag, found: MeasureTag },
    #[error("kernels or fields refer to different grids")]
    GridMismatch,
    #[error("field has length {found}, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error(transparent)]
    Linsolve(#[from] LinsolveError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

fn check_lambda(lambda: (f64, f64)) -> Result<(), VerifyError> {
    let ok = |v: f64| v.is_finite() && v >= 0.0;
    if !(ok(lambda.0) && ok(lambda.1)) {
        return Err(VerifyError::InvalidLambda(lambda));
    }
    Ok(())
}

fn check_len(expected: usize, found: usize) -> Result<(), VerifyError> {
    if expected != found {
        return Err(VerifyError::Length { expected, found });
    }
    Ok(())
}

fn check_measure(kernel: &TransitionKernel, expected: MeasureTag) -> Result<(), VerifyError> {
    if kernel.measure() != expected {
        return Err(VerifyError::WrongMeasure {
            expected,
            found: kernel.measure(),
        });
    }
    Ok(())
}

/// `g = min(λ₀, λ₁z)` per cell.
pub fn stopping_cost(lambda: (f64, f64), kernel: &TransitionKernel) -> Vec<f64> {
    kernel
        .grid()
        .z_points()
        .iter()
        .cycle()
        .take(kernel.num_cells())
        .map(|&z| lambda.0.min(lambda.1 * z))
        .collect()
}

/// One application of the Bellman operator: `min(g, 1 + ρ·H)`.
pub fn bellman_apply(rho: &[f64], lambda: (f64, f64), kernel: &TransitionKernel) -> Result<Vec<f64>, VerifyError> {
    check_len(kernel.num_cells(), rho.len())?;
    let g = stopping_cost(lambda, kernel);
    Ok(kernel
        .matrix()
        .vec_mul(rho)
        .into_iter()
        .zip(g)
        .map(|(d, g)| g.min(1.0 + d))
        .collect())
}

/// Largest `|ρ − T(ρ)| / (1 + ρ)` over the cells.
pub fn bellman_residual(rho: &[f64], lambda: (f64, f64), kernel: &TransitionKernel) -> Result<f64, VerifyError> {
    let t = bellman_apply(rho, lambda, kernel)?;
    Ok(rho
        .iter()
        .zip(&t)
        .map(|(r, v)| (r - v).abs() / (1.0 + r.abs()))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub values: Vec<f64>,
    pub lambda: (f64, f64),
    pub iterations: usize,
    /// Sup-norm change of the last sweep.
    pub final_delta: f64,
    pub converged: bool,
}

impl ValueField {
    pub fn anchor(&self, kernel: &TransitionKernel) -> f64 {
        self.values[kernel.grid().anchor()]
    }
}

/// Iterates `ρ ← T(ρ)` from `ρ = g` until the sup-norm change is at most
/// `tol`. Every sweep is checked to be nonincreasing at every cell.
pub fn value_iteration(
    lambda: (f64, f64),
    kernel: &TransitionKernel,
    tol: f64,
    max_iters: usize,
) -> Result<ValueField, VerifyError> {
    check_lambda(lambda)?;
    check_measure(kernel, MeasureTag::P0)?;
    let g = stopping_cost(lambda, kernel);
    let mut rho = g.clone();
    let mut delta = f64::INFINITY;
    for it in 1..=max_iters {
        let d = kernel.matrix().vec_mul(&rho);
        delta = 0.0;
        for j in 0..rho.len() {
            let v = g[j].min(1.0 + d[j]);
            let inc = v - rho[j];
            if inc > 1e-12 * (1.0 + rho[j]) {
                return Err(VerifyError::NotMonotone {
                    iteration: it,
                    cell: j,
                    increase: inc,
                });
            }
            delta = delta.max(inc.abs());
            rho[j] = v;
        }
        if delta <= tol {
            return Ok(ValueField {
                values: rho,
                lambda,
                iterations: it,
                final_delta: delta,
                converged: true,
            });
        }
    }
    Ok(ValueField {
        values: rho,
        lambda,
        iterations: max_iters,
        final_delta: delta,
        converged: false,
    })
}

fn converged_value(lambda: (f64, f64), kernel: &TransitionKernel, tol: f64, max_iters: usize) -> Result<ValueField, VerifyError> {
    let v = value_iteration(lambda, kernel, tol, max_iters)?;
    if !v.converged {
        return Err(VerifyError::NotConverged {
            iterations: v.iterations,
            delta: v.final_delta,
        });
    }
    Ok(v)
}

/// `L(λ) = ρ_λ(anchor) − λ·γ` with `ρ_λ` from value iteration.
pub fn dual_objective(
    lambda: (f64, f64),
    gamma: (f64, f64),
    kernel: &TransitionKernel,
    tol: f64,
    max_iters: usize,
) -> Result<f64, VerifyError> {
    let v = converged_value(lambda, kernel, tol, max_iters)?;
    Ok(v.anchor(kernel) - lambda.0 * gamma.0 - lambda.1 * gamma.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdDerivative {
    /// Central difference with step `ε`.
    pub value: f64,
    /// Central difference with step `ε/2`.
    pub half_step: f64,
    /// Richardson combination `(4·half − full)/3`.
    pub extrapolated: f64,
    /// `|half_step − value|`, an estimate of the truncation error.
    pub truncation_estimate: f64,
    pub epsilon: f64,
}

/// Central finite difference of the value-iteration anchor in `λ_i`, with a
/// Richardson check at half the step. `epsilon` defaults to `10⁻³·λ_i`.
pub fn fd_derivative(
    lambda: (f64, f64),
    i: Hypothesis,
    epsilon: Option<f64>,
    kernel: &TransitionKernel,
    tol: f64,
    max_iters: usize,
) -> Result<FdDerivative, VerifyError> {
    check_lambda(lambda)?;
    let li = [lambda.0, lambda.1][i.index()];
    let eps = epsilon.unwrap_or(1e-3 * li);
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(VerifyError::InvalidEpsilon(eps));
    }
    let at = |delta: f64| -> Result<f64, VerifyError> {
        let mut l = [lambda.0, lambda.1];
        l[i.index()] = (l[i.index()] + delta).max(0.0);
        Ok(converged_value((l[0], l[1]), kernel, tol, max_iters)?.anchor(kernel))
    };
    let central = |h: f64| -> Result<f64, VerifyError> {
        let lo = (li - h).max(0.0);
        Ok((at(h)? - at(lo - li)?) / (li + h - lo))
    };
    let value = central(eps)?;
    let half_step = central(0.5 * eps)?;
    Ok(FdDerivative {
        value,
        half_step,
        extrapolated: (4.0 * half_step - value) / 3.0,
        truncation_estimate: (half_step - value).abs(),
        epsilon: eps,
    })
}

fn mask_of(regions: &[Region], region: Region) -> Vec<bool> {
    regions.iter().map(|&r| r == region).collect()
}

/// Solves `x = b + Σ_C H x` on the continuation cells and fills `stop`
/// values elsewhere; `b` is the one-step expectation of `stop` plus `unit`.
fn continuation_solve(
    kernel: &TransitionKernel,
    cont: &[bool],
    stop: &[f64],
    unit: bool,
    opts: &SolveOptions,
) -> Result<Vec<f64>, VerifyError> {
    let h = kernel.matrix();
    let off: Vec<f64> = stop.iter().zip(cont).map(|(&v, &c)| if c { 0.0 } else { v }).collect();
    let mut rhs = h.vec_mul(&off);
    if unit {
        rhs.iter_mut().for_each(|v| *v += 1.0);
    }
    if !cont.iter().any(|&c| c) {
        return Ok(off);
    }
    let x = ContinuationSystem::new(h, cont).solve(&rhs, None, opts)?;
    Ok(x.into_iter().zip(off).zip(cont).map(|((x, o), &c)| if c { x } else { o }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorField {
    /// `P₀(decide H1)` from each cell.
    pub alpha0: Vec<f64>,
    /// `P₁(decide H0)` from each cell.
    pub alpha1: Vec<f64>,
    pub anchor_values: (f64, f64),
}

/// Error probabilities of the policy given by `regions`: `α₀` under the P0
/// kernel into the decide-H1 region, `α₁` under the P1 kernel into the
/// decide-H0 region.
pub fn fredholm_errors(
    kernel0: &TransitionKernel,
    kernel1: &TransitionKernel,
    regions: &[Region],
    opts: &SolveOptions,
) -> Result<ErrorField, VerifyError> {
    check_measure(kernel0, MeasureTag::P0)?;
    check_measure(kernel1, MeasureTag::P1)?;
    if kernel0.grid() != kernel1.grid() && **kernel0.grid() != **kernel1.grid() {
        return Err(VerifyError::GridMismatch);
    }
    check_len(kernel0.num_cells(), regions.len())?;
    let cont = mask_of(regions, Region::Continue);
    let ind = |r: Region| -> Vec<f64> { regions.iter().map(|&x| if x == r { 1.0 } else { 0.0 }).collect() };
    let alpha0 = continuation_solve(kernel0, &cont, &ind(Region::StopH1), false, opts)?;
    let alpha1 = continuation_solve(kernel1, &cont, &ind(Region::StopH0), false, opts)?;
    let a = kernel0.grid().anchor();
    Ok(ErrorField {
        anchor_values: (alpha0[a], alpha1[a]),
        alpha0,
        alpha1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeField {
    /// `∂ρ/∂λ₀` per cell.
    pub r0: Vec<f64>,
    /// `∂ρ/∂λ₁` per cell.
    pub r1: Vec<f64>,
    pub anchor_values: (f64, f64),
}

/// Derivatives of the cost in `λ`: `r_i = z_i` on the region where stopping
/// costs `λ_i z_i`, 0 on the other stopping region, and
/// `r_i = E₀[r_i(next)]` on the continuation region.
pub fn fredholm_derivative(
    kernel0: &TransitionKernel,
    regions: &[Region],
    opts: &SolveOptions,
) -> Result<DerivativeField, VerifyError> {
    check_measure(kernel0, MeasureTag::P0)?;
    check_len(kernel0.num_cells(), regions.len())?;
    let grid = kernel0.grid();
    let cont = mask_of(regions, Region::Continue);
    let stop0: Vec<f64> = regions.iter().map(|&r| if r == Region::StopH1 { 1.0 } else { 0.0 }).collect();
    let stop1: Vec<f64> = regions
        .iter()
        .enumerate()
        .map(|(j, &r)| if r == Region::StopH0 { grid.z_of(j) } else { 0.0 })
        .collect();
    let r0 = continuation_solve(kernel0, &cont, &stop0, false, opts)?;
    let r1 = continuation_solve(kernel0, &cont, &stop1, false, opts)?;
    let a = grid.anchor();
    Ok(DerivativeField {
        anchor_values: (r0[a], r1[a]),
        r0,
        r1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLength {
    pub field: Vec<f64>,
    pub anchor: f64,
}

/// Expected number of samples under P0: `N = 1 + E₀[N(next)]` on the
/// continuation cells, 0 on stopping cells.
pub fn run_length(kernel0: &TransitionKernel, continue_mask: &[bool], opts: &SolveOptions) -> Result<RunLength, VerifyError> {
    check_measure(kernel0, MeasureTag::P0)?;
    check_len(kernel0.num_cells(), continue_mask.len())?;
    let zeros = vec![0.0; continue_mask.len()];
    let field = continuation_solve(kernel0, continue_mask, &zeros, true, opts)?;
    let anchor = field[kernel0.grid().anchor()];
    Ok(RunLength { field, anchor })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub a: (f64, f64),
    pub cells_checked: usize,
    /// Largest violation of either bound.
    pub max_violation: f64,
    /// Largest violation in excess of its cell's interpolation budget.
    pub max_excess: f64,
    pub passed: bool,
}

/// Checks `min(a₀,a₁,1)·ρ(z,θ) ≤ ρ(a₀z₀,a₁z₁,θ) ≤ max(a₀,a₁,1)·ρ(z,θ)`.
///
/// With the run-length measure P0, `z₀ ≡ 1` along every path, so scaling
/// `z₀` by `a₀` is the same as scaling `λ₀`; the scaled cost is therefore the
/// value-iteration field at `(a₀λ₀, λ₁)` read at `s + ln a₁`, interpolated
/// linearly in the warped coordinate. Cells whose shifted point leaves the
/// grid, or lands in an edge interval, are skipped. Each violation is
/// budgeted by twice the largest jump of the scaled field across the
/// interpolation stencil.
pub fn scaling_bounds_check(
    lambda: (f64, f64),
    kernel: &TransitionKernel,
    a: (f64, f64),
    rho: Option<&ValueField>,
    tol: f64,
    max_iters: usize,
) -> Result<ScalingReport, VerifyError> {
    check_lambda(lambda)?;
    let grid = kernel.grid();
    let base = match rho {
        Some(v) if v.lambda == lambda => v.clone(),
        _ => converged_value(lambda, kernel, tol, max_iters)?,
    };
    let scaled = converged_value((a.0 * lambda.0, lambda.1), kernel, tol, max_iters)?;
    let lo = a.0.min(a.1).min(1.0);
    let hi = a.0.max(a.1).max(1.0);
    let shift = a.1.ln();
    let (smin, smax) = grid.s_range();
    let s_pts = grid.s_points();
    let mz = grid.m_z();
    let mut report = ScalingReport {
        a,
        cells_checked: 0,
        max_violation: 0.0,
        max_excess: 0.0,
        passed: true,
    };
    for j in 0..grid.num_cells() {
        let (_, si) = grid.split(j);
        let target = s_pts[si] + shift;
        if !(target > smin && target < smax) {
            continue;
        }
        let k = s_pts.partition_point(|&p| p <= target);
        if k <= 1 || k >= mz - 1 {
            continue;
        }
        let Some(loc) = grid.locate_warped(target, grid.theta_of(j)) else {
            continue;
        };
        let value = loc.apply(&scaled.values);
        let mut jump = 0.0f64;
        for (c, _) in loc.iter() {
            let (ti, ci) = grid.split(c);
            for n in [ci.saturating_sub(1), (ci + 1).min(mz - 1)] {
                jump = jump.max((scaled.values[grid.cell(ti, n)] - scaled.values[c]).abs());
            }
        }
        let r = base.values[j];
        let violation = (lo * r - value).max(value - hi * r).max(0.0);
        let budget = 2.0 * jump + 1e-9 * (1.0 + r);
        report.cells_checked += 1;
        report.max_violation = report.max_violation.max(violation);
        report.max_excess = report.max_excess.max(violation - budget);
    }
    report.passed = report.max_excess <= 0.0;
    Ok(report)
}

/// Regions with the outermost continuation cell of every run along `s`
/// turned into stopping cells (decided by the likelihood-ratio rule).
pub fn erode_continuation(regions: &[Region], lambda: (f64, f64), kernel: &TransitionKernel) -> Vec<Region> {
    let grid = kernel.grid();
    let mz = grid.m_z();
    let mut out = regions.to_vec();
    for j in 0..regions.len() {
        if regions[j] != Region::Continue {
            continue;
        }
        let (ti, si) = grid.split(j);
        let edge = [si.checked_sub(1), (si + 1 < mz).then_some(si + 1)]
            .into_iter()
            .any(|n| n.is_none_or(|n| regions[grid.cell(ti, n)] != Region::Continue));
        if edge {
            out[j] = if lambda.0 <= lambda.1 * grid.z_of(j) {
                Region::StopH1
            } else {
                Region::StopH0
            };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    /// Allowed `|value − target|`.
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            tolerance,
            passed: (value - target).abs() <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    pub anchor_rho: f64,
    pub vi_anchor: f64,
    pub alpha: (f64, f64),
    pub derivative: (f64, f64),
    pub fd_derivative: Option<(FdDerivative, FdDerivative)>,
    pub run_length: f64,
    pub expected_run_length: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifySettings {
    pub vi_tol: f64,
    pub vi_max_iters: usize,
    pub solve: SolveOptions,
    /// Include the finite-difference derivative checks (8 value iterations).
    pub finite_differences: bool,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            vi_tol: 1e-11,
            vi_max_iters: 200_000,
            solve: SolveOptions::default(),
            finite_differences: true,
        }
    }
}

/// Runs the oracle suite on a design given as `(λ, ρ, regions)`.
pub fn verify_design(
    kernel0: &TransitionKernel,
    kernel1: &TransitionKernel,
    lambda: (f64, f64),
    gamma: (f64, f64),
    rho: &[f64],
    regions: &[Region],
    settings: &VerifySettings,
) -> Result<VerificationReport, VerifyError> {
    check_len(kernel0.num_cells(), rho.len())?;
    let grid = kernel0.grid();
    let a = grid.anchor();
    let mut checks = Vec::new();
    let rel = |v: f64| 1.0 + v.abs();

    let residual = bellman_residual(rho, lambda, kernel0)?;
    checks.push(Check::new("bellman_residual", residual, 0.0, 1e-6));

    let vi = converged_value(lambda, kernel0, settings.vi_tol, settings.vi_max_iters)?;
    let vi_anchor = vi.values[a];
    checks.push(Check::new("anchor_rho_vs_value_iteration", rho[a], vi_anchor, 1e-4 * rel(vi_anchor)));
    let expected_run_length = rho[a] - lambda.0 * gamma.0 - lambda.1 * gamma.1;
    let dual = vi_anchor - lambda.0 * gamma.0 - lambda.1 * gamma.1;
    checks.push(Check::new("dual_objective", dual, expected_run_length, 1e-4 * rel(dual)));

    let errors = fredholm_errors(kernel0, kernel1, regions, &settings.solve)?;
    let eroded = erode_continuation(regions, lambda, kernel0);
    let eroded_errors = fredholm_errors(kernel0, kernel1, &eroded, &settings.solve)?;
    for (name, alpha, alpha_e, g) in [
        ("alpha0", errors.anchor_values.0, eroded_errors.anchor_values.0, gamma.0),
        ("alpha1", errors.anchor_values.1, eroded_errors.anchor_values.1, gamma.1),
    ] {
        let budget = 0.005f64.max(2.0 * (alpha - alpha_e).abs());
        checks.push(Check::new(name, alpha, g, budget));
    }

    let deriv = fredholm_derivative(kernel0, regions, &settings.solve)?;
    checks.push(Check::new("r0_equals_alpha0_at_anchor", deriv.anchor_values.0, errors.anchor_values.0, 1e-8));
    checks.push(Check::new(
        "r1_equals_alpha1_at_anchor",
        deriv.anchor_values.1,
        errors.anchor_values.1,
        0.005f64.max(0.1 * errors.anchor_values.1),
    ));

    let cont: Vec<bool> = regions.iter().map(|&r| r == Region::Continue).collect();
    let n = run_length(kernel0, &cont, &settings.solve)?;
    checks.push(Check::new("run_length_vs_lp", n.anchor, expected_run_length, 0.02 * expected_run_length.abs()));
    let identity = rho[a] - lambda.0 * deriv.anchor_values.0 - lambda.1 * deriv.anchor_values.1;
    checks.push(Check::new("run_length_identity", n.anchor, identity, 1e-6 * rel(n.anchor)));

    let fd = if settings.finite_differences {
        let f0 = fd_derivative(lambda, Hypothesis::H0, None, kernel0, settings.vi_tol, settings.vi_max_iters)?;
        let f1 = fd_derivative(lambda, Hypothesis::H1, None, kernel0, settings.vi_tol, settings.vi_max_iters)?;
        checks.push(Check::new("fd_derivative_lambda0", f0.value, gamma.0, 0.02 * gamma.0));
        checks.push(Check::new("fd_derivative_lambda1", f1.value, gamma.1, 0.02 * gamma.1));
        Some((f0, f1))
    } else {
        None
    };

    Ok(VerificationReport {
        checks,
        anchor_rho: rho[a],
        vi_anchor,
        alpha: errors.anchor_values,
        derivative: deriv.anchor_values,
        fd_derivative: fd,
        run_length: n.anchor,
        expected_run_length,
    })
}
