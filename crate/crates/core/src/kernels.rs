//! One-step transition kernels of `(s, θ)` discretized on a [`Grid`].
//!
//! Column `j` of the matrix is the law of the next cell given the current
//! cell `j`, so the continuation cost is the row-vector product `1 + ρ·H`.
//! Cell masses are exact Gaussian CDF differences over cell edges; mass that
//! leaves the grid is clamped into the boundary cells.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{bracket, Grid};
use crate::models::{ar1_increment, ModelSpec};
use crate::normal;
use crate::sparse::CscMatrix;

/// Masses below this are dropped before renormalization.
const MASS_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureTag {
    P0,
    P1,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("grid was built for the {grid} model but the kernel model is {model}")]
    ModelGridMismatch { grid: &'static str, model: &'static str },
    #[error("column {column} keeps only {mass} of its mass; the grid range is too small")]
    RangeTooSmall { column: usize, mass: f64 },
    #[error("restriction to an empty set of cells")]
    EmptyRestriction,
    #[error("mask has length {got}, expected {expected}")]
    MaskLength { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
}

#[derive(Debug, Clone)]
pub struct TransitionKernel {
    matrix: CscMatrix,
    measure: MeasureTag,
    grid: Arc<Grid>,
    model: ModelSpec,
}

impl TransitionKernel {
    pub fn matrix(&self) -> &CscMatrix {
        &self.matrix
    }

    pub fn measure(&self) -> MeasureTag {
        self.measure
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn num_cells(&self) -> usize {
        self.matrix.ncols()
    }

    fn check_len(&self, len: usize) -> Result<(), KernelError> {
        if len != self.num_cells() {
            return Err(KernelError::MaskLength {
                got: len,
                expected: self.num_cells(),
            });
        }
        Ok(())
    }

    /// One-step probability of landing in `target` from each source cell.
    pub fn hit_mass(&self, target: &[bool]) -> Result<Vec<f64>, KernelError> {
        self.check_len(target.len())?;
        let indicator: Vec<f64> = target.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(self.matrix.vec_mul(&indicator))
    }

    /// Continuation-restricted submatrix over the kept cells.
    pub fn restrict(&self, keep: &[bool]) -> Result<CscMatrix, KernelError> {
        self.check_len(keep.len())?;
        let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        if idx.is_empty() {
            return Err(KernelError::EmptyRestriction);
        }
        Ok(self.matrix.principal_submatrix(&idx))
    }

    /// Writes the matrix as `row,col,value` triplets.
    pub fn write_triplets_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        self.matrix.write_triplets_csv(w)
    }
}

/// Deposits Gaussian mass `weight · N(mean, sd)` over the s cells of θ row
/// `row`.
fn deposit_gaussian(grid: &Grid, row: usize, weight: f64, mean: f64, sd: f64, out: &mut Vec<(usize, f64)>) {
    if mean == f64::NEG_INFINITY {
        out.push((grid.cell(row, 0), weight));
        return;
    }
    if mean == f64::INFINITY {
        out.push((grid.cell(row, grid.m_z() - 1), weight));
        return;
    }
    let edges = grid.s_edges();
    for k in 0..grid.m_z() {
        let m = weight * normal::interval_mass(edges[k], edges[k + 1], mean, sd);
        if m > MASS_FLOOR {
            out.push((grid.cell(row, k), m));
        }
    }
}

fn iid_column(grid: &Grid, mu: f64, sigma: f64, measure: MeasureTag, j: usize) -> Vec<(usize, f64)> {
    let half = mu * mu / (2.0 * sigma * sigma);
    let drift = if measure == MeasureTag::P0 { -half } else { half };
    let mut col = Vec::new();
    deposit_gaussian(grid, 0, 1.0, grid.s_of(j) + drift, mu.abs() / sigma, &mut col);
    col
}

fn chain_column(
    grid: &Grid,
    sigma: f64,
    p0: [f64; 2],
    p1: [[f64; 2]; 2],
    measure: MeasureTag,
    j: usize,
) -> Vec<(usize, f64)> {
    let (from, _) = grid.split(j);
    let s = grid.s_of(j);
    let s2 = sigma * sigma;
    let mut col = Vec::new();
    for next in 0..2 {
        let (q0, q1) = (p0[next], p1[from][next]);
        let weight = if measure == MeasureTag::P0 { q0 } else { q1 };
        if weight == 0.0 {
            continue;
        }
        let m = (next + 1) as f64 / 2.0;
        let half = m * m / (2.0 * s2);
        let shift = if measure == MeasureTag::P0 { -half } else { half };
        // ln(0) gives ∓∞, which deposits the mass at the matching edge.
        let mean = s + q1.ln() - q0.ln() + shift;
        deposit_gaussian(grid, next, weight, mean, m / sigma, &mut col);
    }
    col
}

/// Per source θ: `(θ' index, mass, Δs)` of every destination θ cell.
fn ar1_theta_moves(grid: &Grid, a0: f64, a1: f64, sigma: f64, measure: MeasureTag) -> Vec<Vec<(usize, f64, f64)>> {
    let crate::grid::ThetaAxis::Real(thetas) = grid.theta_axis() else {
        unreachable!("AR(1) grids have a real θ axis")
    };
    let edges = grid.theta_edges();
    let a = if measure == MeasureTag::P0 { a0 } else { a1 };
    thetas
        .iter()
        .map(|&th| {
            thetas
                .iter()
                .enumerate()
                .filter_map(|(k, &x)| {
                    let m = normal::interval_mass(edges[k], edges[k + 1], a * th, sigma);
                    (m > MASS_FLOOR).then(|| (k, m, ar1_increment(a0, a1, sigma, th, x)))
                })
                .collect()
        })
        .collect()
}

/// Builds the kernel of `model` on `grid` under `measure`.
pub fn build_kernel(model: &ModelSpec, grid: Arc<Grid>, measure: MeasureTag) -> Result<TransitionKernel, KernelError> {
    model.validate()?;
    if grid.kind() != model.kind() {
        return Err(KernelError::ModelGridMismatch {
            grid: grid.kind().name(),
            model: model.kind().name(),
        });
    }
    let n = grid.num_cells();
    let g = grid.as_ref();
    let ar1_moves = match *model {
        ModelSpec::Ar1 { a0, a1, sigma, .. } => ar1_theta_moves(g, a0, a1, sigma, measure),
        _ => Vec::new(),
    };
    let columns: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|j| match *model {
            ModelSpec::IidGaussian { mu, sigma } => iid_column(g, mu, sigma, measure, j),
            ModelSpec::TwoStateChain { sigma, p0, p1 } => chain_column(g, sigma, p0, p1, measure, j),
            ModelSpec::Ar1 { .. } => {
                let (ti, si) = g.split(j);
                let s = g.s_points()[si];
                let mut col = Vec::with_capacity(2 * ar1_moves[ti].len());
                for &(k, m, ds) in &ar1_moves[ti] {
                    let (lo, w) = bracket(g.s_points(), s + ds);
                    if w < 1.0 {
                        col.push((g.cell(k, lo), m * (1.0 - w)));
                    }
                    if w > 0.0 {
                        col.push((g.cell(k, lo + 1), m * w));
                    }
                }
                col
            }
        })
        .collect();
    let mut matrix = CscMatrix::from_columns(n, columns);
    for (j, sum) in matrix.col_sums().into_iter().enumerate() {
        if !(sum >= 0.5) {
            return Err(KernelError::RangeTooSmall { column: j, mass: sum });
        }
        matrix.scale_column(j, 1.0 / sum);
    }
    Ok(TransitionKernel {
        matrix,
        measure,
        grid,
        model: model.clone(),
    })
}
