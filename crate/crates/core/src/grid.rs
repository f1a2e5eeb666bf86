//! Discretization of the state space `(s, θ)`.
//!
//! The log-likelihood-ratio axis is sampled uniformly in the warped
//! coordinate `t = 1/(1 + z^{-β})`, which concentrates points around `z = 1`.
//! The statistic axis is empty for i.i.d. observations, the two chain states,
//! or a uniform grid of previous observations for AR(1). Cells are stored
//! θ-major: `cell = θ_index · m_z + s_index`.

use serde::{Deserialize, Serialize};

use crate::models::{ModelKind, ModelSpec, Statistic};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("warp is defined for z > 0, got {0}")]
    WarpDomain(f64),
    #[error("unwarp is defined for t in (0, 1), got {0}")]
    UnwarpDomain(f64),
    #[error("warp exponent must be finite and > 0, got {0}")]
    InvalidBeta(f64),
    #[error("{name} must be odd and at least 3, got {value}")]
    InvalidCount { name: &'static str, value: usize },
    #[error("degenerate grid range: {0}")]
    DegenerateRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    pub beta: f64,
}

impl Default for WarpSpec {
    fn default() -> Self {
        Self { beta: 0.5 }
    }
}

/// `t_β(z) = 1/(1 + z^{-β})`.
pub fn warp(z: f64, beta: f64) -> Result<f64, GridError> {
    if !(z > 0.0) {
        return Err(GridError::WarpDomain(z));
    }
    Ok(warp_log(z.ln(), beta))
}

/// Inverse of [`warp`].
pub fn unwarp(t: f64, beta: f64) -> Result<f64, GridError> {
    if !(t > 0.0 && t < 1.0) {
        return Err(GridError::UnwarpDomain(t));
    }
    Ok(unwarp_log(t, beta).exp())
}

/// Warp expressed in `s = log z`.
#[inline]
pub fn warp_log(s: f64, beta: f64) -> f64 {
    1.0 / (1.0 + (-beta * s).exp())
}

/// Inverse warp returning `s = log z`.
#[inline]
pub fn unwarp_log(t: f64, beta: f64) -> f64 {
    (t / (1.0 - t)).ln() / beta
}

/// Classical Wald thresholds `(A, B)` for target errors `γ`.
pub fn wald_bounds(gamma: (f64, f64)) -> (f64, f64) {
    let (g0, g1) = gamma;
    (((1.0 - g1) / g0).ln(), (g1 / (1.0 - g0)).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m_z: usize,
    /// Number of θ points; only used by AR(1).
    pub m_theta: usize,
    pub beta: f64,
    /// Margin added beyond each Wald threshold, as a fraction of `A − B`.
    pub s_margin: f64,
    /// θ range for AR(1); defaults to ±6σ.
    pub theta_bounds: Option<(f64, f64)>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            m_z: 201,
            m_theta: 201,
            beta: 0.5,
            s_margin: 0.5,
            theta_bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ThetaAxis {
    /// i.i.d.: a single trivial statistic.
    Unit,
    /// Two-state chain: states 1 and 2.
    States,
    /// AR(1): strictly increasing previous-observation values.
    Real(Vec<f64>),
}

impl ThetaAxis {
    pub fn len(&self) -> usize {
        match self {
            ThetaAxis::Unit => 1,
            ThetaAxis::States => 2,
            ThetaAxis::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn statistic(&self, k: usize) -> Statistic {
        match self {
            ThetaAxis::Unit => Statistic::Unit,
            ThetaAxis::States => Statistic::State(k as u8 + 1),
            ThetaAxis::Real(v) => Statistic::Real(v[k]),
        }
    }

    /// Numeric label of θ row `k` (NaN for the trivial statistic).
    pub fn value(&self, k: usize) -> f64 {
        match self {
            ThetaAxis::Unit => f64::NAN,
            ThetaAxis::States => (k + 1) as f64,
            ThetaAxis::Real(v) => v[k],
        }
    }
}

/// Up to four cells with convex weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Located {
    pub cells: [usize; 4],
    pub weights: [f64; 4],
    pub len: usize,
}

impl Located {
    fn push(&mut self, cell: usize, w: f64) {
        if w == 0.0 {
            return;
        }
        self.cells[self.len] = cell;
        self.weights[self.len] = w;
        self.len += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cells[..self.len]
            .iter()
            .copied()
            .zip(self.weights[..self.len].iter().copied())
    }

    /// Interpolated value of a per-cell field.
    pub fn apply(&self, field: &[f64]) -> f64 {
        self.iter().map(|(c, w)| w * field[c]).sum()
    }
}

/// Bracketing index and weight of the upper neighbour for `x` on a strictly
/// increasing axis, clamped at both ends.
pub(crate) fn bracket(points: &[f64], x: f64) -> (usize, f64) {
    let n = points.len();
    if n == 1 || x <= points[0] {
        return (0, 0.0);
    }
    if x >= points[n - 1] {
        return (n - 2, 1.0);
    }
    let k = points.partition_point(|&p| p <= x);
    let (lo, hi) = (points[k - 1], points[k]);
    (k - 1, ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    kind: ModelKind,
    warp: WarpSpec,
    t_points: Vec<f64>,
    s_points: Vec<f64>,
    z_points: Vec<f64>,
    /// `m_z + 1` edges; the outer ones are infinite.
    s_edges: Vec<f64>,
    theta: ThetaAxis,
    theta_edges: Vec<f64>,
    anchor: usize,
}

fn midpoint_edges(points: &[f64]) -> Vec<f64> {
    let mut e = Vec::with_capacity(points.len() + 1);
    e.push(f64::NEG_INFINITY);
    e.extend(points.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    e.push(f64::INFINITY);
    e
}

fn check_odd(name: &'static str, value: usize) -> Result<(), GridError> {
    if value < 3 || value % 2 == 0 {
        return Err(GridError::InvalidCount { name, value });
    }
    Ok(())
}

/// Builds the grid for `model`, sizing the s-range from Wald's thresholds at
/// `gamma` (the smallest target errors the grid must support).
pub fn build_grid(model: &ModelSpec, spec: &GridSpec, gamma: (f64, f64)) -> Result<Grid, GridError> {
    check_odd("m_z", spec.m_z)?;
    let beta = spec.beta;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(GridError::InvalidBeta(beta));
    }
    if !(spec.s_margin.is_finite() && spec.s_margin >= 0.0) {
        return Err(GridError::DegenerateRange(format!(
            "s_margin must be finite and >= 0, got {}",
            spec.s_margin
        )));
    }
    let (a, b) = wald_bounds(gamma);
    if !(a.is_finite() && b.is_finite() && b < 0.0 && a > 0.0) {
        return Err(GridError::DegenerateRange(format!(
            "target errors {gamma:?} do not give thresholds bracketing zero"
        )));
    }
    let half_range = a.max(-b) + spec.s_margin * (a - b);
    let t_hi = warp_log(half_range, beta);
    if !(t_hi > 0.5 && t_hi < 1.0) {
        return Err(GridError::DegenerateRange(format!(
            "s half-range {half_range} is not representable with beta = {beta}"
        )));
    }
    // Symmetric points with t = 1/2 exactly in the middle, so s = 0 and z = 1
    // exactly at the anchor.
    let mid = spec.m_z / 2;
    let h = (t_hi - 0.5) / mid as f64;
    let mut s_points = vec![0.0; spec.m_z];
    for k in 1..=mid {
        let s = unwarp_log(0.5 + k as f64 * h, beta);
        s_points[mid + k] = s;
        s_points[mid - k] = -s;
    }
    if s_points.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(GridError::DegenerateRange("s points are not strictly increasing".into()));
    }
    let t_points: Vec<f64> = s_points.iter().map(|&s| warp_log(s, beta)).collect();
    let z_points: Vec<f64> = s_points.iter().map(|&s| s.exp()).collect();
    let s_edges = midpoint_edges(&s_points);

    let (theta, theta_index) = match *model {
        ModelSpec::IidGaussian { .. } => (ThetaAxis::Unit, 0),
        ModelSpec::TwoStateChain { .. } => (ThetaAxis::States, 0),
        ModelSpec::Ar1 { sigma, theta0, .. } => {
            check_odd("m_theta", spec.m_theta)?;
            let (lo, hi) = spec.theta_bounds.unwrap_or((-6.0 * sigma, 6.0 * sigma));
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(GridError::DegenerateRange(format!("theta bounds ({lo}, {hi})")));
            }
            if !(lo..=hi).contains(&theta0) {
                return Err(GridError::DegenerateRange(format!(
                    "theta0 = {theta0} outside theta bounds ({lo}, {hi})"
                )));
            }
            let step = (hi - lo) / (spec.m_theta - 1) as f64;
            // Shift the uniform grid by less than half a step so θ₀ is a point.
            let k0 = ((theta0 - lo) / step).round() as usize;
            let k0 = k0.min(spec.m_theta - 1);
            let points: Vec<f64> = (0..spec.m_theta)
                .map(|k| {
                    if k == k0 {
                        theta0
                    } else {
                        theta0 + (k as f64 - k0 as f64) * step
                    }
                })
                .collect();
            (ThetaAxis::Real(points), k0)
        }
    };
    let theta_edges = match &theta {
        ThetaAxis::Real(p) => midpoint_edges(p),
        _ => Vec::new(),
    };
    let anchor = theta_index * spec.m_z + mid;
    Ok(Grid {
        kind: model.kind(),
        warp: WarpSpec { beta },
        t_points,
        s_points,
        z_points,
        s_edges,
        theta,
        theta_edges,
        anchor,
    })
}

impl Grid {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn warp(&self) -> WarpSpec {
        self.warp
    }

    pub fn m_z(&self) -> usize {
        self.s_points.len()
    }

    pub fn m_theta(&self) -> usize {
        self.theta.len()
    }

    pub fn num_cells(&self) -> usize {
        self.m_z() * self.m_theta()
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn t_points(&self) -> &[f64] {
        &self.t_points
    }

    pub fn s_points(&self) -> &[f64] {
        &self.s_points
    }

    pub fn z_points(&self) -> &[f64] {
        &self.z_points
    }

    pub fn s_edges(&self) -> &[f64] {
        &self.s_edges
    }

    pub fn theta_axis(&self) -> &ThetaAxis {
        &self.theta
    }

    /// θ cell edges for AR(1) (empty otherwise).
    pub fn theta_edges(&self) -> &[f64] {
        &self.theta_edges
    }

    /// `(lowest, highest)` s point.
    pub fn s_range(&self) -> (f64, f64) {
        (self.s_points[0], self.s_points[self.m_z() - 1])
    }

    #[inline]
    pub fn cell(&self, theta_index: usize, s_index: usize) -> usize {
        theta_index * self.m_z() + s_index
    }

    /// `(θ index, s index)` of a flat cell index.
    #[inline]
    pub fn split(&self, cell: usize) -> (usize, usize) {
        (cell / self.m_z(), cell % self.m_z())
    }

    #[inline]
    pub fn s_of(&self, cell: usize) -> f64 {
        self.s_points[cell % self.m_z()]
    }

    #[inline]
    pub fn z_of(&self, cell: usize) -> f64 {
        self.z_points[cell % self.m_z()]
    }

    pub fn theta_of(&self, cell: usize) -> Statistic {
        self.theta.statistic(cell / self.m_z())
    }

    /// `z` of every cell, in cell order.
    pub fn z_field(&self) -> Vec<f64> {
        (0..self.num_cells()).map(|c| self.z_of(c)).collect()
    }

    /// Distance between the midpoints around s point `k` (the width of its
    /// cell, with one-sided widths at the boundary).
    pub fn s_width(&self, k: usize) -> f64 {
        let s = &self.s_points;
        let n = s.len();
        match k {
            0 => s[1] - s[0],
            _ if k == n - 1 => s[n - 1] - s[n - 2],
            _ => 0.5 * (s[k + 1] - s[k - 1]),
        }
    }

    /// Cell width around `s` (largest of the two bracketing cells).
    pub fn s_width_at(&self, s: f64) -> f64 {
        let (k, _) = bracket(&self.s_points, s);
        self.s_width(k).max(self.s_width(k + 1))
    }

    /// Row index of θ on the statistic axis, exact for discrete axes and
    /// requiring an exact grid point for AR(1).
    pub fn theta_index(&self, theta: Statistic) -> Option<usize> {
        match (&self.theta, theta) {
            (ThetaAxis::Unit, Statistic::Unit) => Some(0),
            (ThetaAxis::States, Statistic::State(k @ (1 | 2))) => Some(k as usize - 1),
            (ThetaAxis::Real(p), Statistic::Real(v)) => p.iter().position(|&x| x == v),
            _ => None,
        }
    }

    fn theta_bracket(&self, theta: Statistic) -> Option<(usize, f64)> {
        match (&self.theta, theta) {
            (ThetaAxis::Real(p), Statistic::Real(v)) => Some(bracket(p, v)),
            _ => self.theta_index(theta).map(|k| (k, 0.0)),
        }
    }

    fn locate_by(&self, s_pos: (usize, f64), theta: Statistic) -> Option<Located> {
        let (tk, tw) = self.theta_bracket(theta)?;
        let (sk, sw) = s_pos;
        let mut out = Located {
            cells: [0; 4],
            weights: [0.0; 4],
            len: 0,
        };
        for (ti, wt) in [(tk, 1.0 - tw), (tk + 1, tw)] {
            if wt == 0.0 {
                continue;
            }
            for (si, ws) in [(sk, 1.0 - sw), (sk + 1, sw)] {
                out.push(self.cell(ti, si), wt * ws);
            }
        }
        Some(out)
    }

    /// Cells and weights interpolating linearly in s (and θ for AR(1)),
    /// clamping outside the grid. `None` if θ is not on a discrete axis.
    pub fn locate(&self, s: f64, theta: Statistic) -> Option<Located> {
        self.locate_by(bracket(&self.s_points, s), theta)
    }

    /// As [`Grid::locate`] but linear in the warped coordinate `t`.
    pub fn locate_warped(&self, s: f64, theta: Statistic) -> Option<Located> {
        let t = warp_log(s, self.warp.beta);
        self.locate_by(bracket(&self.t_points, t), theta)
    }

    /// Whether `s` lies inside the span of the s points.
    pub fn s_in_range(&self, s: f64) -> bool {
        let (lo, hi) = self.s_range();
        (lo..=hi).contains(&s)
    }
}
