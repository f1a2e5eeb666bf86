//! Two-phase revised primal simplex on `max cᵀx, Ax ≤ b, x ≥ 0`.
//!
//! The basis inverse is kept as a dense LU factorization plus a product-form
//! eta file, refactorized periodically. Pricing is Dantzig's rule with a
//! Harris two-pass ratio test; after a run of degenerate pivots the method
//! switches to Bland's rule until progress resumes. A small deterministic
//! rhs perturbation is applied first and removed at the end; if the
//! unperturbed basic solution is not feasible the solve is repeated without
//! perturbation.

use crate::dense::DenseLu;

const PIVOT_TOL: f64 = 1e-9;
/// Pivots below this fraction of the largest column entry are rejected.
const REL_PIVOT_TOL: f64 = 1e-7;
const REFACTOR_EVERY: usize = 50;
const DEGENERATE_RUN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CoreStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

pub(crate) struct CoreResult {
    pub status: CoreStatus,
    /// Structural values.
    pub x: Vec<f64>,
    /// Row duals in the orientation of the input rows (≥ 0 at optimality).
    pub duals: Vec<f64>,
    pub iterations: usize,
}

/// Dense problem data, column-major `m × n`.
pub(crate) struct DenseLp<'a> {
    pub m: usize,
    pub n: usize,
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub c: &'a [f64],
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Col {
    Structural(usize),
    Slack(usize),
    Artificial(usize),
}

struct Simplex<'a> {
    lp: &'a DenseLp<'a>,
    /// −1 for rows flipped to make the rhs nonnegative.
    sign: Vec<f64>,
    rhs: Vec<f64>,
    /// Column id: `0..n` structural, `n..n+m` slack, `n+m..n+2m` artificial.
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    x_b: Vec<f64>,
    lu: DenseLu,
    etas: Vec<(usize, Vec<f64>)>,
    iterations: usize,
    feas_tol: f64,
    opt_tol: f64,
}

impl<'a> Simplex<'a> {
    fn col(&self, id: usize) -> Col {
        let (n, m) = (self.lp.n, self.lp.m);
        if id < n {
            Col::Structural(id)
        } else if id < n + m {
            Col::Slack(id - n)
        } else {
            Col::Artificial(id - n - m)
        }
    }

    fn dense_column(&self, id: usize) -> Vec<f64> {
        let m = self.lp.m;
        let mut v = vec![0.0; m];
        match self.col(id) {
            Col::Structural(j) => {
                for i in 0..m {
                    v[i] = self.sign[i] * self.lp.a[j * m + i];
                }
            }
            Col::Slack(i) => v[i] = self.sign[i],
            Col::Artificial(i) => v[i] = 1.0,
        }
        v
    }

    /// `yᵀ a_id`.
    fn col_dot(&self, id: usize, y: &[f64]) -> f64 {
        let m = self.lp.m;
        match self.col(id) {
            Col::Structural(j) => {
                let a = &self.lp.a[j * m..(j + 1) * m];
                (0..m).map(|i| self.sign[i] * a[i] * y[i]).sum()
            }
            Col::Slack(i) => self.sign[i] * y[i],
            Col::Artificial(i) => y[i],
        }
    }

    fn refactor(&mut self) -> bool {
        let m = self.lp.m;
        let mut bmat = vec![0.0; m * m];
        for (k, &id) in self.basis.iter().enumerate() {
            let col = self.dense_column(id);
            for i in 0..m {
                bmat[i * m + k] = col[i];
            }
        }
        match DenseLu::factor(bmat, m) {
            Ok(lu) => {
                self.lu = lu;
                self.etas.clear();
                self.x_b = self.lu.solve(&self.rhs);
                true
            }
            Err(_) => false,
        }
    }

    fn ftran(&self, v: &[f64]) -> Vec<f64> {
        let mut x = self.lu.solve(v);
        for (r, w) in &self.etas {
            let xr = x[*r] / w[*r];
            if xr != 0.0 {
                for (i, wi) in w.iter().enumerate() {
                    x[i] -= wi * xr;
                }
            }
            x[*r] = xr;
        }
        x
    }

    fn btran(&self, c: &[f64]) -> Vec<f64> {
        let mut u = c.to_vec();
        for (r, w) in self.etas.iter().rev() {
            let s: f64 = w.iter().zip(&u).enumerate().filter(|(i, _)| i != r).map(|(_, (wi, ui))| wi * ui).sum();
            u[*r] = (u[*r] - s) / w[*r];
        }
        self.lu.solve_transpose(&u)
    }

    fn cost(&self, id: usize, phase1: bool) -> f64 {
        match (self.col(id), phase1) {
            (Col::Artificial(_), true) => -1.0,
            (Col::Structural(j), false) => self.lp.c[j],
            _ => 0.0,
        }
    }

    fn duals(&self, phase1: bool) -> Vec<f64> {
        let cb: Vec<f64> = self.basis.iter().map(|&id| self.cost(id, phase1)).collect();
        self.btran(&cb)
    }

    fn pivot(&mut self, r: usize, q: usize, w: Vec<f64>, step: f64) -> bool {
        for (xi, wi) in self.x_b.iter_mut().zip(&w) {
            *xi -= step * wi;
        }
        self.x_b[r] = step;
        self.is_basic[self.basis[r]] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        self.etas.push((r, w));
        if self.etas.len() >= REFACTOR_EVERY {
            return self.refactor();
        }
        true
    }

    /// Runs simplex iterations for the given phase. Returns `None` on
    /// optimality, or the terminating status.
    fn iterate(&mut self, phase1: bool, max_iters: usize) -> Option<CoreStatus> {
        let total_cols = self.lp.n + 2 * self.lp.m;
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iters {
                return Some(CoreStatus::IterationLimit);
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let y = self.duals(phase1);
            let mut entering: Option<(usize, f64)> = None;
            for id in 0..total_cols {
                if self.is_basic[id] || matches!(self.col(id), Col::Artificial(_)) {
                    continue;
                }
                let d = self.cost(id, phase1) - self.col_dot(id, &y);
                if d > self.opt_tol {
                    if bland {
                        entering = Some((id, d));
                        break;
                    }
                    if entering.is_none_or(|(_, best)| d > best) {
                        entering = Some((id, d));
                    }
                }
            }
            let Some((q, _)) = entering else {
                return None;
            };
            let w = self.ftran(&self.dense_column(q));
            // Zero-level artificials left in the basis after phase 1 must stay
            // at zero, so they block movement in either direction.
            let wr: Vec<f64> = if phase1 {
                w.clone()
            } else {
                w.iter()
                    .zip(&self.basis)
                    .map(|(&wi, &id)| if matches!(self.col(id), Col::Artificial(_)) { wi.abs() } else { wi })
                    .collect()
            };
            let wmax = wr.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let piv_tol = PIVOT_TOL.max(REL_PIVOT_TOL * wmax);
            let leaving = if bland {
                let mut best: Option<(usize, f64)> = None;
                for (i, &wi) in wr.iter().enumerate() {
                    if wi > piv_tol {
                        let ratio = self.x_b[i].max(0.0) / wi;
                        let better = match best {
                            None => true,
                            Some((r, br)) => ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[i] < self.basis[r]),
                        };
                        if better {
                            best = Some((i, ratio));
                        }
                    }
                }
                best.map(|(r, _)| r)
            } else {
                let mut bound = f64::INFINITY;
                for (i, &wi) in wr.iter().enumerate() {
                    if wi > piv_tol {
                        bound = bound.min((self.x_b[i].max(0.0) + self.feas_tol) / wi);
                    }
                }
                let mut best: Option<(usize, f64)> = None;
                for (i, &wi) in wr.iter().enumerate() {
                    if wi > piv_tol && self.x_b[i].max(0.0) / wi <= bound && best.is_none_or(|(_, bw)| wi > bw) {
                        best = Some((i, wi));
                    }
                }
                best.map(|(r, _)| r)
            };
            let Some(r) = leaving else {
                return Some(CoreStatus::Unbounded);
            };
            let step = self.x_b[r].max(0.0) / wr[r];
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.iterations += 1;
            if !self.pivot(r, q, w, step) {
                return Some(CoreStatus::IterationLimit);
            }
        }
    }

    /// Dual simplex iterations from a dual-feasible basis until the basic
    /// solution is primal feasible. Used after the rhs perturbation is
    /// removed. Returns `None` on success.
    fn dual_cleanup(&mut self, max_iters: usize) -> Option<CoreStatus> {
        let m = self.lp.m;
        loop {
            let Some((r, xr)) = self
                .x_b
                .iter()
                .copied()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
            else {
                return None;
            };
            if xr >= -self.feas_tol {
                return None;
            }
            if self.iterations >= max_iters {
                return Some(CoreStatus::IterationLimit);
            }
            let mut e = vec![0.0; m];
            e[r] = 1.0;
            let row = self.btran(&e);
            let y = self.duals(false);
            let alphas: Vec<(usize, f64)> = (0..self.lp.n + m)
                .filter(|&id| !self.is_basic[id])
                .map(|id| (id, self.col_dot(id, &row)))
                .collect();
            let amax = alphas.iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs()));
            let piv_tol = PIVOT_TOL.max(REL_PIVOT_TOL * amax);
            let mut best: Option<(usize, f64, f64)> = None;
            for (id, alpha) in alphas {
                if alpha < -piv_tol {
                    let d = (self.cost(id, false) - self.col_dot(id, &y)).min(0.0);
                    let ratio = d / alpha;
                    let better = match best {
                        None => true,
                        Some((_, br, ba)) => ratio < br - 1e-12 || (ratio <= br + 1e-12 && alpha.abs() > ba),
                    };
                    if better {
                        best = Some((id, ratio, alpha.abs()));
                    }
                }
            }
            let Some((q, _, _)) = best else {
                return Some(CoreStatus::Infeasible);
            };
            let w = self.ftran(&self.dense_column(q));
            let step = self.x_b[r] / w[r];
            self.iterations += 1;
            if !self.pivot(r, q, w, step) {
                return Some(CoreStatus::IterationLimit);
            }
        }
    }

    /// Pivots zero-level artificials out of the basis where possible.
    fn drive_out_artificials(&mut self) {
        let m = self.lp.m;
        for r in 0..m {
            if !matches!(self.col(self.basis[r]), Col::Artificial(_)) {
                continue;
            }
            let mut e = vec![0.0; m];
            e[r] = 1.0;
            let row = self.btran(&e);
            let mut best: Option<(usize, f64)> = None;
            for id in 0..self.lp.n + m {
                if self.is_basic[id] {
                    continue;
                }
                let alpha = self.col_dot(id, &row).abs();
                if alpha > 1e-7 && best.is_none_or(|(_, b)| alpha > b) {
                    best = Some((id, alpha));
                }
            }
            if let Some((q, _)) = best {
                let w = self.ftran(&self.dense_column(q));
                let step = self.x_b[r] / w[r];
                self.pivot(r, q, w, step);
            }
        }
    }
}

fn perturbation(i: usize, b: f64) -> f64 {
    // Deterministic spread in [1, 2) · 1e-7 · (1 + |b|).
    let h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40;
    (1.0 + h as f64 / (1u64 << 24) as f64) * 1e-7 * (1.0 + b.abs())
}

fn run(lp: &DenseLp<'_>, opt_tol: f64, max_iters: usize, perturb: bool) -> (CoreResult, bool) {
    let (m, n) = (lp.m, lp.n);
    let sign: Vec<f64> = lp.b.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
    let orig_rhs: Vec<f64> = lp.b.iter().map(|b| b.abs()).collect();
    // The perturbation always relaxes: flipped rows read `−a·x − s = |b|`.
    let rhs: Vec<f64> = if perturb {
        orig_rhs
            .iter()
            .zip(&sign)
            .enumerate()
            .map(|(i, (&b, &sg))| {
                let e = perturbation(i, b);
                if sg > 0.0 {
                    b + e
                } else {
                    b - e.min(0.5 * b)
                }
            })
            .collect()
    } else {
        orig_rhs.clone()
    };
    let basis: Vec<usize> = (0..m).map(|i| if sign[i] > 0.0 { n + i } else { n + m + i }).collect();
    let mut is_basic = vec![false; n + 2 * m];
    for &id in &basis {
        is_basic[id] = true;
    }
    let scale = 1.0 + orig_rhs.iter().fold(0.0f64, |a, b| a.max(*b));
    let mut s = Simplex {
        lp,
        sign,
        rhs,
        basis,
        is_basic,
        x_b: Vec::new(),
        lu: DenseLu::factor(vec![1.0], 1).expect("1x1 identity"),
        etas: Vec::new(),
        iterations: 0,
        feas_tol: 1e-9 * scale,
        opt_tol,
    };
    let failed = |s: &Simplex, status| {
        (
            CoreResult {
                status,
                x: vec![0.0; n],
                duals: vec![0.0; m],
                iterations: s.iterations,
            },
            true,
        )
    };
    if !s.refactor() {
        return failed(&s, CoreStatus::IterationLimit);
    }

    if s.sign.iter().any(|&v| v < 0.0) {
        if let Some(status) = s.iterate(true, max_iters) {
            if status == CoreStatus::IterationLimit {
                return failed(&s, status);
            }
        }
        let infeas: f64 = s
            .basis
            .iter()
            .zip(&s.x_b)
            .filter(|(&id, _)| matches!(s.col(id), Col::Artificial(_)))
            .map(|(_, &v)| v.max(0.0))
            .sum();
        if infeas > 1e-7 * scale {
            return (
                CoreResult {
                    status: CoreStatus::Infeasible,
                    x: vec![0.0; n],
                    duals: vec![0.0; m],
                    iterations: s.iterations,
                },
                perturb,
            );
        }
        s.drive_out_artificials();
    }

    let mut status = s.iterate(false, max_iters).unwrap_or(CoreStatus::Optimal);
    let mut clean = true;
    if status == CoreStatus::Optimal {
        if perturb {
            s.rhs = orig_rhs;
        }
        if !s.refactor() {
            return failed(&s, CoreStatus::IterationLimit);
        }
        // Remove the perturbation (and any drift) from a dual-feasible basis,
        // then confirm optimality with the exact data.
        for _ in 0..3 {
            match s.dual_cleanup(max_iters) {
                None => {}
                Some(_) => {
                    clean = false;
                    break;
                }
            }
            status = s.iterate(false, max_iters).unwrap_or(CoreStatus::Optimal);
            if status != CoreStatus::Optimal || !s.refactor() {
                clean = false;
                break;
            }
            if s.x_b.iter().all(|&v| v >= -s.feas_tol) {
                break;
            }
        }
        clean = clean
            && s.x_b.iter().all(|&v| v >= -s.feas_tol)
            && s.basis.iter().zip(&s.x_b).all(|(&id, &v)| !matches!(s.col(id), Col::Artificial(_)) || v <= s.feas_tol);
    }
    let mut x = vec![0.0; n];
    for (&id, &v) in s.basis.iter().zip(&s.x_b) {
        if let Col::Structural(j) = s.col(id) {
            x[j] = v.max(0.0);
        }
    }
    let y = s.duals(false);
    let duals = y.iter().zip(&s.sign).map(|(v, sg)| v * sg).collect();
    (
        CoreResult {
            status,
            x,
            duals,
            iterations: s.iterations,
        },
        !clean,
    )
}

pub(crate) fn solve(lp: &DenseLp<'_>, opt_tol: f64, max_iters: usize) -> CoreResult {
    let (first, retry) = run(lp, opt_tol, max_iters, true);
    if !retry {
        return first;
    }
    let (mut second, _) = run(lp, opt_tol, max_iters, false);
    second.iterations += first.iterations;
    second
}
