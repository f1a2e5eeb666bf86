//! Executable test policies and threshold extraction.

use serde::{Deserialize, Serialize};

use super::{DesignSolution, Region};
use crate::grid::{bracket, ThetaAxis};
use crate::models::{Hypothesis, Statistic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    /// Continuation cells exist and the thresholds are interpolated crossings
    /// of the stopping and continuation costs.
    Regular,
    /// No continuation cell: `A = B` at the decision switch `ln(λ₀/λ₁)`.
    AlwaysStop,
}

/// Thresholds in log-LR tabulated over the statistic axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateThresholds {
    pub axis: ThetaAxis,
    /// Upper threshold `A(θ)` (decide H1 at or above).
    pub upper: Vec<f64>,
    /// Lower threshold `B(θ)` (decide H0 at or below).
    pub lower: Vec<f64>,
    pub kind: Vec<RowKind>,
    /// The continuation cells of the row are not contiguous; the outermost
    /// crossings were used.
    pub multiple_crossings: Vec<bool>,
    /// The continuation region reaches the top (bottom) s point of the grid.
    pub upper_at_edge: Vec<bool>,
    pub lower_at_edge: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestPolicy {
    Constant { upper: f64, lower: f64 },
    StateDependent(StateThresholds),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("upper threshold {upper} is below lower threshold {lower} at row {row}")]
    Inverted { row: usize, upper: f64, lower: f64 },
    #[error("threshold table is malformed: {0}")]
    Malformed(String),
    #[error("statistic {0:?} does not match the policy's statistic axis")]
    Statistic(Statistic),
}

impl StateThresholds {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let n = self.axis.len();
        let lens = [
            self.upper.len(),
            self.lower.len(),
            self.kind.len(),
            self.multiple_crossings.len(),
            self.upper_at_edge.len(),
            self.lower_at_edge.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(PolicyError::Malformed(format!("row counts {lens:?} for {n} θ rows")));
        }
        if let ThetaAxis::Real(p) = &self.axis {
            if p.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(PolicyError::Malformed("θ values must be strictly increasing".into()));
            }
        }
        for k in 0..n {
            let (a, b) = (self.upper[k], self.lower[k]);
            if a.is_nan() || b.is_nan() {
                return Err(PolicyError::Malformed(format!("NaN threshold at row {k}")));
            }
            let ok = match self.kind[k] {
                RowKind::Regular => b < a,
                RowKind::AlwaysStop => b == a,
            };
            if !ok {
                return Err(PolicyError::Inverted { row: k, upper: a, lower: b });
            }
        }
        Ok(())
    }
}

impl TestPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            TestPolicy::Constant { upper, lower } => {
                if !(lower < upper) {
                    return Err(PolicyError::Inverted {
                        row: 0,
                        upper: *upper,
                        lower: *lower,
                    });
                }
                Ok(())
            }
            TestPolicy::StateDependent(t) => t.validate(),
        }
    }

    /// `(A(θ), B(θ))`: exact rows for discrete axes; linear interpolation in
    /// θ, clamped to the table edges, for a real axis.
    pub fn thresholds(&self, theta: Statistic) -> Result<(f64, f64), PolicyError> {
        match self {
            TestPolicy::Constant { upper, lower } => Ok((*upper, *lower)),
            TestPolicy::StateDependent(t) => match (&t.axis, theta) {
                (ThetaAxis::Unit, Statistic::Unit) => Ok((t.upper[0], t.lower[0])),
                (ThetaAxis::States, Statistic::State(k @ (1 | 2))) => {
                    let k = k as usize - 1;
                    Ok((t.upper[k], t.lower[k]))
                }
                (ThetaAxis::Real(p), Statistic::Real(v)) => {
                    if p.len() == 1 {
                        return Ok((t.upper[0], t.lower[0]));
                    }
                    let (k, w) = bracket(p, v);
                    let lerp = |f: &[f64]| f[k] + w * (f[k + 1] - f[k]);
                    Ok((lerp(&t.upper), lerp(&t.lower)))
                }
                _ => Err(PolicyError::Statistic(theta)),
            },
        }
    }

    /// Decision at `(s, θ)`, or `None` to continue sampling.
    pub fn decide(&self, s: f64, theta: Statistic) -> Result<Option<Hypothesis>, PolicyError> {
        let (a, b) = self.thresholds(theta)?;
        Ok(if s >= a {
            Some(Hypothesis::H1)
        } else if s <= b {
            Some(Hypothesis::H0)
        } else {
            None
        })
    }
}

/// Interpolated zero of `f` between `(s0, f0)` and `(s1, f1)`, clamped to the
/// segment.
fn crossing(s0: f64, f0: f64, s1: f64, f1: f64) -> f64 {
    let denom = f0 - f1;
    let frac = if denom == 0.0 { 0.5 } else { (f0 / denom).clamp(0.0, 1.0) };
    s0 + frac * (s1 - s0)
}

/// Per θ row, the interpolated points where `g − d` changes sign at the
/// outer boundaries of the continuation region.
pub fn extract_thresholds(solution: &DesignSolution) -> TestPolicy {
    let grid = &solution.grid;
    let (mz, mt) = (grid.m_z(), grid.m_theta());
    let s = grid.s_points();
    let switch = (solution.lambda.0 / solution.lambda.1).ln();
    let mut t = StateThresholds {
        axis: grid.theta_axis().clone(),
        upper: Vec::with_capacity(mt),
        lower: Vec::with_capacity(mt),
        kind: Vec::with_capacity(mt),
        multiple_crossings: Vec::with_capacity(mt),
        upper_at_edge: Vec::with_capacity(mt),
        lower_at_edge: Vec::with_capacity(mt),
    };
    for k in 0..mt {
        let cell = |i: usize| grid.cell(k, i);
        let f = |i: usize| solution.stopping_cost[cell(i)] - solution.continuation_cost[cell(i)];
        let cont: Vec<usize> = (0..mz).filter(|&i| solution.regions[cell(i)] == Region::Continue).collect();
        let (Some(&bot), Some(&top)) = (cont.first(), cont.last()) else {
            t.upper.push(switch);
            t.lower.push(switch);
            t.kind.push(RowKind::AlwaysStop);
            t.multiple_crossings.push(false);
            t.upper_at_edge.push(false);
            t.lower_at_edge.push(false);
            continue;
        };
        let upper = if top == mz - 1 {
            s[mz - 1]
        } else {
            crossing(s[top], f(top), s[top + 1], f(top + 1))
        };
        let lower = if bot == 0 {
            s[0]
        } else {
            crossing(s[bot], f(bot), s[bot - 1], f(bot - 1))
        };
        t.upper.push(upper);
        t.lower.push(lower);
        t.kind.push(RowKind::Regular);
        t.multiple_crossings.push(top - bot + 1 != cont.len());
        t.upper_at_edge.push(top == mz - 1);
        t.lower_at_edge.push(bot == 0);
    }
    TestPolicy::StateDependent(t)
}
