//! Design of the optimal test from the discretized linear program.
//!
//! Variables are `(λ₀, λ₁, ρ₁..ρ_M)`; the program maximizes
//! `ρ_anchor − γ₀λ₀ − γ₁λ₁` subject to, for every cell `j`,
//! `ρ_j ≤ λ₀`, `ρ_j ≤ λ₁ z_j` and `ρ_j ≤ 1 + Σ_i H_ij ρ_i`.
//! Small grids are solved as one LP; large grids by an exact decomposition
//! over `λ` (see `cuts`). Both are followed by a Bellman repair of `ρ` and a
//! stop/continue classification of every cell.

mod cuts;
mod policy;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use policy::{extract_thresholds, PolicyError, RowKind, StateThresholds, TestPolicy};

use crate::grid::{build_grid, Grid, GridError, GridSpec};
use crate::kernels::{build_kernel, KernelError, MeasureTag, TransitionKernel};
use crate::linsolve::{LinsolveError, SolveOptions};
use crate::lp_core::{solve_lp_with, LinearProgram, LpForm, LpOptions, LpStatus};
use crate::models::{Hypothesis, ModelSpec, Statistic};
use crate::sparse::CscMatrix;

/// Grids up to this many cells are solved as a single LP under
/// [`Route::Auto`].
pub const MONOLITHIC_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DesignError {
    #[error("target error probabilities must lie in (0, 1), got {0:?}")]
    InvalidGamma((f64, f64)),
    #[error("invalid regularization: {0}")]
    Regularization(String),
    #[error("design requires a kernel under P0, got {0:?}")]
    WrongMeasure(MeasureTag),
    #[error("linear program ended with status {status}")]
    Lp { status: LpStatus },
    #[error(
        "trivial test: the anchor is a stopping cell (rho = {rho}, stopping cost = {stopping_cost}); \
         the targets are too lax to require any sample"
    )]
    TrivialTest { rho: f64, stopping_cost: f64 },
    #[error("Bellman repair failed: {0}")]
    Repair(String),
    #[error(transparent)]
    Linsolve(#[from] LinsolveError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Objective term `c·Σ_j η_j ρ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub c: f64,
    /// Per-cell weights; `None` selects uniform weights normalized so that
    /// both `Σ η_j` and `Σ η_j z_j` are at most 1.
    pub eta: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub model: ModelSpec,
    pub kernel: Arc<TransitionKernel>,
    pub gamma: (f64, f64),
    pub regularization: Option<Regularization>,
}

impl DesignProblem {
    /// Builds the grid (sized for `gamma`) and the P0 kernel.
    pub fn new(model: &ModelSpec, spec: &GridSpec, gamma: (f64, f64)) -> Result<Self, DesignError> {
        check_gamma(gamma)?;
        let grid = Arc::new(build_grid(model, spec, gamma)?);
        let kernel = Arc::new(build_kernel(model, grid, MeasureTag::P0)?);
        Ok(Self {
            model: model.clone(),
            kernel,
            gamma,
            regularization: None,
        })
    }

    /// Same grid and kernel with different targets.
    pub fn with_gamma(&self, gamma: (f64, f64)) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.kernel.grid()
    }

    fn validate(&self) -> Result<(), DesignError> {
        check_gamma(self.gamma)?;
        if self.kernel.measure() != MeasureTag::P0 {
            return Err(DesignError::WrongMeasure(self.kernel.measure()));
        }
        if let Some(r) = &self.regularization {
            let limit = self.gamma.0.min(self.gamma.1);
            if !(r.c >= 0.0 && r.c < limit) {
                return Err(DesignError::Regularization(format!(
                    "c must satisfy 0 <= c < min(gamma) = {limit}, got {}",
                    r.c
                )));
            }
            if let Some(eta) = &r.eta {
                if eta.len() != self.grid().num_cells() || eta.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(DesignError::Regularization("eta must be a nonnegative per-cell vector".into()));
                }
            }
        }
        Ok(())
    }

    /// Objective weights over ρ: the anchor indicator plus `c·η`.
    fn weights(&self) -> Vec<f64> {
        let grid = self.grid();
        let n = grid.num_cells();
        let mut w = vec![0.0; n];
        if let Some(r) = &self.regularization {
            let eta = r.eta.clone().unwrap_or_else(|| default_eta(grid));
            for (wi, e) in w.iter_mut().zip(eta) {
                *wi = r.c * e;
            }
        }
        w[grid.anchor()] += 1.0;
        w
    }
}

fn check_gamma(gamma: (f64, f64)) -> Result<(), DesignError> {
    let ok = |g: f64| g > 0.0 && g < 1.0;
    if !(ok(gamma.0) && ok(gamma.1)) {
        return Err(DesignError::InvalidGamma(gamma));
    }
    Ok(())
}

/// Uniform `η` with `Σ η ≤ 1` and `Σ η z ≤ 1`.
pub fn default_eta(grid: &Grid) -> Vec<f64> {
    let n = grid.num_cells();
    let zsum: f64 = grid.z_field().iter().sum();
    vec![1.0 / (n as f64).max(zsum); n]
}

/// Builds the LP from its parts: kernel matrix, `z` per cell, and objective
/// weights over ρ.
pub fn assemble_lp(h: &CscMatrix, z: &[f64], weights: &[f64], gamma: (f64, f64)) -> LinearProgram {
    let n = z.len();
    let mut lp = LinearProgram::new(n + 2);
    lp.set_var_name(0, "lambda0").unwrap();
    lp.set_var_name(1, "lambda1").unwrap();
    lp.set_objective(0, -gamma.0).unwrap();
    lp.set_objective(1, -gamma.1).unwrap();
    for (j, &w) in weights.iter().enumerate() {
        lp.set_var_name(2 + j, format!("rho{j}")).unwrap();
        if w != 0.0 {
            lp.set_objective(2 + j, w).unwrap();
        }
    }
    for j in 0..n {
        let r = 2 + j;
        lp.add_le(vec![(r, 1.0), (0, -1.0)], 0.0).unwrap();
        lp.add_le(vec![(r, 1.0), (1, -z[j])], 0.0).unwrap();
        let (rows, vals) = h.column(j);
        let mut coeffs = vec![(r, 1.0)];
        coeffs.extend(rows.iter().zip(vals).map(|(&i, &v)| (2 + i as usize, -v)));
        lp.add_le(coeffs, 1.0).unwrap();
    }
    lp
}

/// The design LP of `problem`.
pub fn assemble_design_lp(problem: &DesignProblem) -> Result<LinearProgram, DesignError> {
    problem.validate()?;
    let grid = problem.grid();
    Ok(assemble_lp(problem.kernel.matrix(), &grid.z_field(), &problem.weights(), problem.gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    /// Monolithic up to [`MONOLITHIC_LIMIT`] cells, decomposition above.
    Auto,
    Monolithic,
    Decomposition,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    /// LP optimality tolerance (and relative bound gap of the decomposition).
    pub tol: f64,
    pub max_iters: Option<usize>,
    pub route: Route,
    /// Sup-norm change at which the Bellman repair stops.
    pub repair_tol: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: None,
            route: Route::Auto,
            repair_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Continue,
    /// Stop and decide H1 (`λ₀z₀ ≤ λ₁z₁`).
    StopH1,
    /// Stop and decide H0.
    StopH0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub route: Route,
    pub status: LpStatus,
    /// LP objective, including any regularization term.
    pub objective_value: f64,
    /// Simplex iterations (monolithic) or cuts (decomposition).
    pub iterations: usize,
    /// Upper bound minus objective of the decomposition (0 for monolithic).
    pub bound_gap: f64,
    /// Largest violation of the LP rows by the returned `(λ, ρ)`.
    pub max_primal_residual: f64,
    /// Anchor value of ρ before repair.
    pub anchor_rho_lp: f64,
    pub repair_sweeps: usize,
    /// `max_j |ρ_j − min(g_j, d_j)| / (1 + ρ_j)` after repair.
    pub bellman_residual: f64,
}

#[derive(Debug, Clone)]
pub struct DesignSolution {
    pub lambda: (f64, f64),
    pub gamma: (f64, f64),
    pub rho: Vec<f64>,
    pub expected_run_length: f64,
    pub regions: Vec<Region>,
    /// `g = min(λ₀, λ₁ z)`.
    pub stopping_cost: Vec<f64>,
    /// `d = 1 + ρ·H`.
    pub continuation_cost: Vec<f64>,
    pub report: SolverReport,
    pub warnings: Vec<String>,
    pub grid: Arc<Grid>,
}

impl DesignSolution {
    pub fn mask(&self, region: Region) -> Vec<bool> {
        self.regions.iter().map(|&r| r == region).collect()
    }

    pub fn continue_mask(&self) -> Vec<bool> {
        self.mask(Region::Continue)
    }

    pub fn anchor_rho(&self) -> f64 {
        self.rho[self.grid.anchor()]
    }

    /// Exact lookup of the region of the cell nearest to `(s, θ)` (θ must
    /// be a grid value).
    pub fn region_at(&self, s: f64, theta: Statistic) -> Option<Region> {
        let row = self.grid.theta_index(theta)?;
        let pts = self.grid.s_points();
        let k = pts.partition_point(|&p| p < s).min(pts.len() - 1);
        let k = if k > 0 && (s - pts[k - 1]).abs() <= (pts[k] - s).abs() { k - 1 } else { k };
        Some(self.regions[self.grid.cell(row, k)])
    }

    /// Decision of the region lookup at `(s, θ)`.
    pub fn decide_exact(&self, s: f64, theta: Statistic) -> Option<Option<Hypothesis>> {
        self.region_at(s, theta).map(|r| match r {
            Region::Continue => None,
            Region::StopH1 => Some(Hypothesis::H1),
            Region::StopH0 => Some(Hypothesis::H0),
        })
    }
}

/// Largest violation of the design LP rows by `(λ, ρ)`.
pub fn lp_residual(h: &CscMatrix, z: &[f64], lambda: (f64, f64), rho: &[f64]) -> f64 {
    let d = h.vec_mul(rho);
    let mut worst = (-lambda.0).max(-lambda.1);
    for j in 0..z.len() {
        worst = worst
            .max(rho[j] - lambda.0)
            .max(rho[j] - lambda.1 * z[j])
            .max(rho[j] - 1.0 - d[j])
            .max(-rho[j]);
    }
    worst.max(0.0)
}

/// Iterates `ρ ← min(λ₀, λ₁z, 1 + ρ·H)` until the sup-norm change is at most
/// `tol`. Returns the repaired ρ and the number of sweeps.
pub fn repair_solution(
    rho: &[f64],
    lambda: (f64, f64),
    kernel: &TransitionKernel,
    tol: f64,
) -> Result<(Vec<f64>, usize), DesignError> {
    let h = kernel.matrix();
    let g = cuts::stopping_cost(lambda, &kernel.grid().z_field());
    let mut rho = rho.to_vec();
    let mut first_change = None;
    for sweep in 1..=1_000_000usize {
        let d = h.vec_mul(&rho);
        let mut change = 0.0f64;
        for j in 0..rho.len() {
            let v = g[j].min(1.0 + d[j]);
            change = change.max((v - rho[j]).abs());
            rho[j] = v;
        }
        if !change.is_finite() {
            return Err(DesignError::Repair("non-finite iterate".into()));
        }
        let first = *first_change.get_or_insert(change);
        if change <= tol {
            return Ok((rho, sweep));
        }
        if sweep > 1000 && change > 10.0 * first.max(tol) {
            return Err(DesignError::Repair(format!("change grew from {first:e} to {change:e}")));
        }
    }
    Err(DesignError::Repair("no convergence within the sweep limit".into()))
}

/// Solves the design LP for `problem` and classifies the cells.
pub fn design_test(problem: &DesignProblem, opts: &DesignOptions) -> Result<DesignSolution, DesignError> {
    problem.validate()?;
    let grid = problem.grid().clone();
    let h = problem.kernel.matrix();
    let z = grid.z_field();
    let weights = problem.weights();
    let n = grid.num_cells();
    let route = match opts.route {
        Route::Auto if n <= MONOLITHIC_LIMIT => Route::Monolithic,
        Route::Auto => Route::Decomposition,
        r => r,
    };
    let mut warnings = Vec::new();
    let (lambda, rho_lp, objective_value, iterations, bound_gap) = match route {
        Route::Monolithic => {
            let lp = assemble_lp(h, &z, &weights, problem.gamma);
            let sol = solve_lp_with(
                &lp,
                &LpOptions {
                    tol: opts.tol,
                    max_iters: opts.max_iters,
                    form: LpForm::Auto,
                },
            );
            if sol.status != LpStatus::Optimal {
                return Err(DesignError::Lp { status: sol.status });
            }
            ((sol.x[0], sol.x[1]), sol.x[2..].to_vec(), sol.objective_value, sol.iterations, 0.0)
        }
        Route::Decomposition | Route::Auto => {
            let settings = cuts::CutSettings {
                gap_tol: opts.tol.min(1e-9),
                max_cuts: opts.max_iters.unwrap_or(300),
                lambda_max: 1e4 / problem.gamma.0.min(problem.gamma.1),
                lp_tol: 1e-10,
            };
            let out = cuts::solve_by_cuts(h, &z, &weights, problem.gamma, &settings, &SolveOptions::default())?;
            if !out.converged {
                return Err(DesignError::Lp {
                    status: LpStatus::IterationLimit,
                });
            }
            if out.at_box {
                warnings.push(format!(
                    "multiplier bound {} is active; the design may be truncated",
                    settings.lambda_max
                ));
            }
            (out.lambda, out.rho, out.value, out.cuts, out.upper_bound - out.value)
        }
    };
    let max_primal_residual = lp_residual(h, &z, lambda, &rho_lp);
    let anchor = grid.anchor();
    let (rho, repair_sweeps) = repair_solution(&rho_lp, lambda, &problem.kernel, opts.repair_tol)?;

    let g = cuts::stopping_cost(lambda, &z);
    let d: Vec<f64> = h.vec_mul(&rho).into_iter().map(|v| v + 1.0).collect();
    let bellman_residual = (0..n)
        .map(|j| (rho[j] - g[j].min(d[j])).abs() / (1.0 + rho[j]))
        .fold(0.0f64, f64::max);
    let regions: Vec<Region> = (0..n)
        .map(|j| {
            if rho[j] >= g[j] - 1e-6 * (1.0 + rho[j]) {
                if lambda.0 <= lambda.1 * z[j] {
                    Region::StopH1
                } else {
                    Region::StopH0
                }
            } else {
                Region::Continue
            }
        })
        .collect();
    if regions[anchor] != Region::Continue {
        return Err(DesignError::TrivialTest {
            rho: rho[anchor],
            stopping_cost: g[anchor],
        });
    }
    let mz = grid.m_z();
    for k in 0..grid.m_theta() {
        if regions[grid.cell(k, 0)] == Region::Continue || regions[grid.cell(k, mz - 1)] == Region::Continue {
            warnings.push(format!("continuation region reaches the s-range edge in θ row {k}"));
            break;
        }
    }
    let expected_run_length = rho[anchor] - lambda.0 * problem.gamma.0 - lambda.1 * problem.gamma.1;
    Ok(DesignSolution {
        lambda,
        gamma: problem.gamma,
        expected_run_length,
        regions,
        stopping_cost: g,
        continuation_cost: d,
        report: SolverReport {
            route,
            status: LpStatus::Optimal,
            objective_value,
            iterations,
            bound_gap,
            max_primal_residual,
            anchor_rho_lp: rho_lp[anchor],
            repair_sweeps,
            bellman_residual,
        },
        warnings,
        grid,
        rho,
    })
}
