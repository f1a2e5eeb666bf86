//! Linear programs `max cᵀx` subject to `Ax ≤ b`, `x ≥ 0`.
//!
//! The solver is a dense two-phase revised simplex. Problems with many more
//! rows than variables (such as the design LP, with three rows per grid
//! cell) are solved through their dual, whose basis has one row per
//! variable; the primal solution is then read off the dual's row prices.

mod simplex;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use simplex::{CoreStatus, DenseLp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("constraint references variable {index} but the program has {num_vars} variables")]
    VariableOutOfRange { index: usize, num_vars: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Sparse `(variable, coefficient)` pairs.
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `max objective·x` subject to `≤` rows and `x ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    var_names: Vec<Option<String>>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            var_names: vec![None; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) -> Result<(), LpError> {
        self.check_var(var)?;
        if !coeff.is_finite() {
            return Err(LpError::NonFinite("objective"));
        }
        self.objective[var] = coeff;
        Ok(())
    }

    pub fn set_var_name(&mut self, var: usize, name: impl Into<String>) -> Result<(), LpError> {
        self.check_var(var)?;
        self.var_names[var] = Some(name.into());
        Ok(())
    }

    pub fn var_name(&self, var: usize) -> String {
        self.var_names[var].clone().unwrap_or_else(|| format!("X{var}"))
    }

    /// Adds `Σ coeffs ≤ rhs` and returns its row index.
    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> Result<usize, LpError> {
        for &(j, v) in &coeffs {
            self.check_var(j)?;
            if !v.is_finite() {
                return Err(LpError::NonFinite("constraint"));
            }
        }
        if !rhs.is_finite() {
            return Err(LpError::NonFinite("rhs"));
        }
        self.constraints.push(Constraint { coeffs, rhs });
        Ok(self.constraints.len() - 1)
    }

    fn check_var(&self, var: usize) -> Result<(), LpError> {
        if var >= self.num_vars {
            return Err(LpError::VariableOutOfRange {
                index: var,
                num_vars: self.num_vars,
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of `Ax ≤ b` or `x ≥ 0`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|r| r.coeffs.iter().map(|&(j, v)| v * x[j]).sum::<f64>() - r.rhs);
        let bounds = x.iter().map(|v| -v);
        rows.chain(bounds).fold(0.0f64, |a, v| a.max(v))
    }

    /// Column-major dense copy of `A`.
    fn dense_columns(&self) -> Vec<f64> {
        let m = self.constraints.len();
        let mut a = vec![0.0; m * self.num_vars];
        for (i, r) in self.constraints.iter().enumerate() {
            for &(j, v) in &r.coeffs {
                a[j * m + i] += v;
            }
        }
        a
    }

    /// Writes the program in free MPS layout with an `OBJSENSE MAX` section.
    pub fn write_mps<W: Write>(&self, mut w: W, name: &str) -> io::Result<()> {
        writeln!(w, "NAME {name}")?;
        writeln!(w, "OBJSENSE")?;
        writeln!(w, "    MAX")?;
        writeln!(w, "ROWS")?;
        writeln!(w, " N  OBJ")?;
        for i in 0..self.constraints.len() {
            writeln!(w, " L  R{i}")?;
        }
        writeln!(w, "COLUMNS")?;
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.num_vars];
        for (i, r) in self.constraints.iter().enumerate() {
            for &(j, v) in &r.coeffs {
                by_col[j].push((i, v));
            }
        }
        for (j, entries) in by_col.iter().enumerate() {
            let name = self.var_name(j);
            if self.objective[j] != 0.0 {
                writeln!(w, "    {name}  OBJ  {:e}", self.objective[j])?;
            }
            for &(i, v) in entries {
                writeln!(w, "    {name}  R{i}  {v:e}")?;
            }
            if self.objective[j] == 0.0 && entries.is_empty() {
                writeln!(w, "    {name}  OBJ  0")?;
            }
        }
        writeln!(w, "RHS")?;
        for (i, r) in self.constraints.iter().enumerate() {
            if r.rhs != 0.0 {
                writeln!(w, "    RHS  R{i}  {:e}", r.rhs)?;
            }
        }
        writeln!(w, "ENDATA")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: LpStatus,
    pub max_primal_residual: f64,
    pub iterations: usize,
    /// Row prices (≥ 0 at optimality), when available.
    pub duals: Option<Vec<f64>>,
}

/// Which problem the simplex method runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpForm {
    /// Dual when rows outnumber variables by more than 3:2.
    Auto,
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub tol: f64,
    /// Defaults to `10·(num_vars + num_constraints)`.
    pub max_iters: Option<usize>,
    pub form: LpForm,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: None,
            form: LpForm::Auto,
        }
    }
}

/// Solves `lp` with the default form selection.
pub fn solve_lp(lp: &LinearProgram, tol: f64, max_iters: usize) -> LpSolution {
    solve_lp_with(
        lp,
        &LpOptions {
            tol,
            max_iters: Some(max_iters),
            form: LpForm::Auto,
        },
    )
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &LpOptions) -> LpSolution {
    let (m, n) = (lp.num_constraints(), lp.num_vars());
    let max_iters = opts.max_iters.unwrap_or(10 * (n + m));
    let use_dual = match opts.form {
        LpForm::Auto => 2 * m > 3 * n,
        LpForm::Primal => false,
        LpForm::Dual => true,
    };
    let first = if use_dual {
        solve_dual(lp, opts.tol, max_iters)
    } else {
        solve_primal(lp, opts.tol, max_iters)
    };
    // An infeasible dual leaves the primal status ambiguous (reported as
    // Unbounded by `solve_dual`); settle it on the primal. An uncertified
    // optimum is retried on the other form.
    let settled = match first.status {
        LpStatus::Optimal => certified(lp, &first, opts.tol),
        LpStatus::Infeasible => true,
        LpStatus::Unbounded => !use_dual,
        LpStatus::IterationLimit => false,
    };
    if settled {
        return first;
    }
    let mut second = if use_dual {
        solve_primal(lp, opts.tol, max_iters)
    } else {
        solve_dual(lp, opts.tol, max_iters)
    };
    second.iterations += first.iterations;
    if second.status == LpStatus::Optimal && !certified(lp, &second, opts.tol) {
        second.status = LpStatus::IterationLimit;
    }
    second
}

/// Checks an optimal solution independently of the simplex state: primal
/// feasibility, dual feasibility of the row prices and a closed duality gap,
/// all relative to the data scale.
fn certified(lp: &LinearProgram, sol: &LpSolution, tol: f64) -> bool {
    let Some(y) = &sol.duals else {
        return false;
    };
    let bscale = 1.0 + lp.constraints.iter().fold(0.0f64, |a, r| a.max(r.rhs.abs()));
    let cscale = 1.0 + lp.objective.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let slack = 10.0 * tol.max(1e-9);
    if sol.max_primal_residual > slack * bscale || y.iter().any(|&v| v < -slack * cscale) {
        return false;
    }
    let mut aty = vec![0.0; lp.num_vars];
    for (r, &v) in lp.constraints.iter().zip(y) {
        for &(j, a) in &r.coeffs {
            aty[j] += a * v;
        }
    }
    if aty.iter().zip(&lp.objective).any(|(a, c)| c - a > slack * cscale) {
        return false;
    }
    let by: f64 = lp.constraints.iter().zip(y).map(|(r, v)| r.rhs * v).sum();
    (by - sol.objective_value).abs() <= slack * (1.0 + sol.objective_value.abs()) * bscale.max(cscale)
}

fn finish(lp: &LinearProgram, status: LpStatus, x: Vec<f64>, duals: Option<Vec<f64>>, iterations: usize) -> LpSolution {
    LpSolution {
        objective_value: lp.evaluate(&x),
        max_primal_residual: lp.max_violation(&x),
        x,
        status,
        iterations,
        duals,
    }
}

fn map_status(s: CoreStatus) -> LpStatus {
    match s {
        CoreStatus::Optimal => LpStatus::Optimal,
        CoreStatus::Infeasible => LpStatus::Infeasible,
        CoreStatus::Unbounded => LpStatus::Unbounded,
        CoreStatus::IterationLimit => LpStatus::IterationLimit,
    }
}

fn solve_primal(lp: &LinearProgram, tol: f64, max_iters: usize) -> LpSolution {
    let a = lp.dense_columns();
    let b: Vec<f64> = lp.constraints.iter().map(|r| r.rhs).collect();
    let dense = DenseLp {
        m: lp.num_constraints(),
        n: lp.num_vars(),
        a: &a,
        b: &b,
        c: &lp.objective,
    };
    let r = simplex::solve(&dense, tol, max_iters);
    let duals = (r.status == CoreStatus::Optimal).then_some(r.duals);
    finish(lp, map_status(r.status), r.x, duals, r.iterations)
}

/// Solves `min bᵀy, Aᵀy ≥ c, y ≥ 0` posed as `max −bᵀy, −Aᵀy ≤ −c`.
fn solve_dual(lp: &LinearProgram, tol: f64, max_iters: usize) -> LpSolution {
    let (m, n) = (lp.num_constraints(), lp.num_vars());
    // Column i of −Aᵀ is −(row i of A).
    let mut at = vec![0.0; n * m];
    for (i, r) in lp.constraints.iter().enumerate() {
        for &(j, v) in &r.coeffs {
            at[i * n + j] -= v;
        }
    }
    let rhs: Vec<f64> = lp.objective.iter().map(|c| -c).collect();
    let cost: Vec<f64> = lp.constraints.iter().map(|r| -r.rhs).collect();
    let dense = DenseLp {
        m: n,
        n: m,
        a: &at,
        b: &rhs,
        c: &cost,
    };
    let r = simplex::solve(&dense, tol, max_iters);
    match r.status {
        CoreStatus::Optimal => finish(lp, LpStatus::Optimal, r.duals, Some(r.x), r.iterations),
        // An unbounded dual certifies primal infeasibility.
        CoreStatus::Unbounded => finish(lp, LpStatus::Infeasible, vec![0.0; n], None, r.iterations),
        // An infeasible dual means the primal is unbounded or infeasible.
        CoreStatus::Infeasible => finish(lp, LpStatus::Unbounded, vec![0.0; n], None, r.iterations),
        CoreStatus::IterationLimit => finish(lp, LpStatus::IterationLimit, vec![0.0; n], None, r.iterations),
    }
}
