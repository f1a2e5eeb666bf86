//! Linear systems restricted to a continuation region.
//!
//! Every Fredholm-type equation in this crate has the form
//! `x_j = b_j + Σ_{i∈C} H_ij x_i` for `j ∈ C`, i.e. `(I − K̄ᵀ) x = b` with `K̄`
//! the kernel restricted to the continuation cells `C`. The restriction is
//! sub-stochastic with escape mass, so the system is nonsingular whenever the
//! stopping region is reachable from every continuation cell.

use std::sync::OnceLock;

use crate::dense::{DenseLu, SingularMatrix};
use crate::sparse::CscMatrix;

/// Largest system solved by dense factorization under [`Method::Auto`].
pub const DENSE_LIMIT: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Dense LU up to [`DENSE_LIMIT`] unknowns, GMRES above.
    Auto,
    Dense,
    Gmres,
    /// `x ← b + K̄ᵀx`, converging because `K̄` is sub-stochastic.
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative residual target `‖b − Ax‖ ≤ tol·‖b‖` (sup-norm change for
    /// fixed-point iteration).
    pub tol: f64,
    pub max_iters: usize,
    pub method: Method,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 20_000,
            method: Method::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinsolveError {
    #[error("continuation system is singular (spectral radius estimate {spectral_radius:.12})")]
    Singular { spectral_radius: f64 },
    #[error(
        "continuation solve did not converge after {iterations} iterations \
         (relative residual {residual:e}, spectral radius estimate {spectral_radius:.12})"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        spectral_radius: f64,
    },
}

/// `(I − K̄ᵀ)` over the cells flagged in `keep`.
pub struct ContinuationSystem<'a> {
    matrix: &'a CscMatrix,
    idx: Vec<usize>,
    dense: OnceLock<Result<DenseLu, SingularMatrix>>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> ContinuationSystem<'a> {
    pub fn new(matrix: &'a CscMatrix, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), matrix.ncols());
        assert_eq!(matrix.nrows(), matrix.ncols());
        Self {
            matrix,
            idx: (0..keep.len()).filter(|&i| keep[i]).collect(),
            dense: OnceLock::new(),
        }
    }

    /// Number of unknowns.
    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    /// Full-length cell indices of the unknowns.
    pub fn cells(&self) -> &[usize] {
        &self.idx
    }

    /// `y = K̄ᵀx` on restricted vectors; `full` is an all-zero scratch buffer
    /// of full length outside the continuation cells.
    fn kt_apply(&self, x: &[f64], full: &mut [f64], y: &mut [f64]) {
        for (k, &c) in self.idx.iter().enumerate() {
            full[c] = x[k];
        }
        for (k, &c) in self.idx.iter().enumerate() {
            y[k] = self.matrix.col_dot(c, full);
        }
    }

    /// `y = (I − K̄ᵀ)x`.
    fn apply(&self, x: &[f64], full: &mut [f64], y: &mut [f64]) {
        self.kt_apply(x, full, y);
        for (yk, xk) in y.iter_mut().zip(x) {
            *yk = xk - *yk;
        }
    }

    /// Power-iteration estimate of the spectral radius of `K̄`.
    pub fn spectral_radius_estimate(&self, iters: usize) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        let mut full = vec![0.0; self.matrix.ncols()];
        let mut v = vec![1.0; n];
        let mut w = vec![0.0; n];
        let mut ratio = 0.0;
        for _ in 0..iters {
            self.kt_apply(&v, &mut full, &mut w);
            let m = w.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            ratio = m / v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if m == 0.0 {
                return 0.0;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / m;
            }
        }
        ratio
    }

    fn dense_lu(&self) -> &Result<DenseLu, SingularMatrix> {
        self.dense.get_or_init(|| {
            let n = self.len();
            let mut pos = vec![usize::MAX; self.matrix.ncols()];
            for (k, &c) in self.idx.iter().enumerate() {
                pos[c] = k;
            }
            // Row k of (I − K̄ᵀ) is the continuation column idx[k] of H.
            let mut a = vec![0.0; n * n];
            for (k, &c) in self.idx.iter().enumerate() {
                a[k * n + k] = 1.0;
                let (rows, vals) = self.matrix.column(c);
                for (&i, &v) in rows.iter().zip(vals) {
                    let l = pos[i as usize];
                    if l != usize::MAX {
                        a[k * n + l] -= v;
                    }
                }
            }
            DenseLu::factor(a, n)
        })
    }

    fn restrict(&self, full: &[f64]) -> Vec<f64> {
        assert_eq!(full.len(), self.matrix.ncols());
        self.idx.iter().map(|&c| full[c]).collect()
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.matrix.ncols()];
        for (k, &c) in self.idx.iter().enumerate() {
            out[c] = x[k];
        }
        out
    }

    fn singular(&self) -> LinsolveError {
        LinsolveError::Singular {
            spectral_radius: self.spectral_radius_estimate(500),
        }
    }

    /// Solves the system for a full-length right-hand side (entries outside
    /// the continuation set are ignored). Returns a full-length vector that is
    /// zero outside the continuation set.
    pub fn solve(&self, rhs: &[f64], guess: Option<&[f64]>, opts: &SolveOptions) -> Result<Vec<f64>, LinsolveError> {
        let b = self.restrict(rhs);
        if b.is_empty() {
            return Ok(vec![0.0; rhs.len()]);
        }
        let x0 = guess.map(|g| self.restrict(g));
        let method = match opts.method {
            Method::Auto if self.len() <= DENSE_LIMIT => Method::Dense,
            Method::Auto => Method::Gmres,
            m => m,
        };
        let x = match method {
            Method::Dense => match self.dense_lu() {
                Ok(lu) => lu.solve(&b),
                Err(_) => return Err(self.singular()),
            },
            Method::Gmres => self.gmres(&b, x0, opts)?,
            Method::FixedPoint => self.fixed_point(&b, x0, opts)?,
            Method::Auto => unreachable!(),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(self.singular());
        }
        Ok(self.expand(&x))
    }

    fn fixed_point(&self, b: &[f64], x0: Option<Vec<f64>>, opts: &SolveOptions) -> Result<Vec<f64>, LinsolveError> {
        let n = b.len();
        let mut full = vec![0.0; self.matrix.ncols()];
        let mut x = x0.unwrap_or_else(|| b.to_vec());
        let mut y = vec![0.0; n];
        let mut change = f64::INFINITY;
        for _ in 0..opts.max_iters {
            self.kt_apply(&x, &mut full, &mut y);
            change = 0.0;
            let mut scale = 1.0f64;
            for k in 0..n {
                let v = b[k] + y[k];
                change = change.max((v - x[k]).abs());
                scale = scale.max(v.abs());
                x[k] = v;
            }
            if !change.is_finite() {
                break;
            }
            if change <= opts.tol * scale {
                return Ok(x);
            }
        }
        Err(LinsolveError::NotConverged {
            iterations: opts.max_iters,
            residual: change,
            spectral_radius: self.spectral_radius_estimate(500),
        })
    }

    /// Restarted GMRES with modified Gram–Schmidt and Givens rotations.
    fn gmres(&self, b: &[f64], x0: Option<Vec<f64>>, opts: &SolveOptions) -> Result<Vec<f64>, LinsolveError> {
        const RESTART: usize = 60;
        let n = b.len();
        let mut full = vec![0.0; self.matrix.ncols()];
        let bnorm = norm2(b);
        let mut x = x0.unwrap_or_else(|| vec![0.0; n]);
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let target = opts.tol * bnorm;
        let mut total = 0usize;
        let mut r = vec![0.0; n];
        let mut w = vec![0.0; n];
        loop {
            self.apply(&x, &mut full, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            let beta = norm2(&r);
            if beta <= target {
                return Ok(x);
            }
            if total >= opts.max_iters || !beta.is_finite() {
                return Err(LinsolveError::NotConverged {
                    iterations: total,
                    residual: beta / bnorm,
                    spectral_radius: self.spectral_radius_estimate(500),
                });
            }
            let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
            let mut h = vec![vec![0.0; RESTART]; RESTART + 1];
            let (mut cs, mut sn) = (vec![0.0; RESTART], vec![0.0; RESTART]);
            let mut g = vec![0.0; RESTART + 1];
            g[0] = beta;
            let mut k_used = 0;
            for k in 0..RESTART {
                self.apply(&basis[k], &mut full, &mut w);
                total += 1;
                for _pass in 0..2 {
                    for (i, v) in basis.iter().enumerate() {
                        let hij = dot(&w, v);
                        h[i][k] += hij;
                        for (wi, vi) in w.iter_mut().zip(v) {
                            *wi -= hij * vi;
                        }
                    }
                }
                let hn = norm2(&w);
                h[k + 1][k] = hn;
                for i in 0..k {
                    let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                    h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                    h[i][k] = t;
                }
                let denom = h[k][k].hypot(h[k + 1][k]);
                if denom == 0.0 {
                    k_used = k;
                    break;
                }
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
                h[k][k] = denom;
                h[k + 1][k] = 0.0;
                g[k + 1] = -sn[k] * g[k];
                g[k] *= cs[k];
                k_used = k + 1;
                if g[k + 1].abs() <= target || hn == 0.0 || total >= opts.max_iters {
                    break;
                }
                basis.push(w.iter().map(|v| v / hn).collect());
            }
            let mut y = vec![0.0; k_used];
            for i in (0..k_used).rev() {
                let s: f64 = (i + 1..k_used).map(|j| h[i][j] * y[j]).sum();
                y[i] = (g[i] - s) / h[i][i];
            }
            for (yi, v) in y.iter().zip(&basis) {
                for (xk, vk) in x.iter_mut().zip(v) {
                    *xk += yi * vk;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Random-walk kernel on a line of `n` cells with absorbing ends.
    fn walk(n: usize, stay: f64) -> CscMatrix {
        let move_p = (1.0 - stay) / 2.0;
        let cols = (0..n)
            .map(|j| {
                let mut c = vec![(j, stay)];
                c.push((j.saturating_sub(1), move_p));
                c.push(((j + 1).min(n - 1), move_p));
                c
            })
            .collect();
        CscMatrix::from_columns(n, cols)
    }

    /// Expected exit time of a symmetric walk from an interval: known in
    /// closed form, `k (L − k) / (1 − stay)` for interior positions.
    fn exit_time_exact(n: usize, stay: f64, j: usize) -> f64 {
        let (k, l) = (j as f64, (n - 1) as f64);
        k * (l - k) / (1.0 - stay)
    }

    #[test]
    fn all_methods_agree_with_closed_form() {
        let n = 41;
        let h = walk(n, 0.3);
        let keep: Vec<bool> = (0..n).map(|i| i > 0 && i < n - 1).collect();
        let sys = ContinuationSystem::new(&h, &keep);
        let ones = vec![1.0; n];
        for method in [Method::Dense, Method::Gmres, Method::FixedPoint, Method::Auto] {
            let opts = SolveOptions { method, max_iters: 200_000, ..SolveOptions::default() };
            let x = sys.solve(&ones, None, &opts).unwrap();
            for j in 1..n - 1 {
                let exact = exit_time_exact(n, 0.3, j);
                assert!((x[j] - exact).abs() < 1e-8 * exact, "{method:?} cell {j}: {} vs {exact}", x[j]);
            }
            assert_eq!(x[0], 0.0);
        }
    }

    #[test]
    fn closed_recurrent_class_is_singular() {
        let n = 5;
        let h = walk(n, 0.0);
        let keep = vec![true; n];
        let sys = ContinuationSystem::new(&h, &keep);
        let err = sys
            .solve(&vec![1.0; n], None, &SolveOptions { method: Method::Dense, ..SolveOptions::default() })
            .unwrap_err();
        match err {
            LinsolveError::Singular { spectral_radius } => assert!((spectral_radius - 1.0).abs() < 1e-6),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn spectral_radius_below_one_with_escape() {
        let n = 21;
        let h = walk(n, 0.5);
        let keep: Vec<bool> = (0..n).map(|i| i > 0 && i < n - 1).collect();
        let r = ContinuationSystem::new(&h, &keep).spectral_radius_estimate(2000);
        // Eigenvalue of the lazy walk restricted to 19 interior cells.
        let exact = 0.5 + 0.5 * (std::f64::consts::PI / 20.0).cos();
        assert!((r - exact).abs() < 1e-6, "{r} vs {exact}");
    }

    #[test]
    fn empty_system() {
        let h = walk(3, 0.5);
        let sys = ContinuationSystem::new(&h, &[false; 3]);
        assert!(sys.is_empty());
        assert_eq!(sys.solve(&[1.0; 3], None, &SolveOptions::default()).unwrap(), vec![0.0; 3]);
    }
}
