//! Design artifacts on disk: `design.json`, `rho.csv` and `thresholds.csv`.
//!
//! Floats are written in shortest round-trip form, so reading an artifact
//! back reproduces the in-memory values bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::design::{DesignSolution, Region, RowKind, SolverReport, StateThresholds, TestPolicy};
use crate::grid::{GridSpec, ThetaAxis};
use crate::models::{ModelKind, ModelSpec};

pub const DESIGN_FILE: &str = "design.json";
pub const RHO_FILE: &str = "rho.csv";
pub const THRESHOLDS_FILE: &str = "thresholds.csv";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {message}", path.display())]
    Content { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Grid metadata recorded with a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub spec: GridSpec,
    pub num_cells: usize,
    pub anchor: usize,
    pub s_range: (f64, f64),
    /// Outer θ points for AR(1).
    pub theta_range: Option<(f64, f64)>,
}

/// Contents of `design.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub model: ModelSpec,
    pub gamma: (f64, f64),
    pub lambda: (f64, f64),
    pub expected_run_length: f64,
    pub regularization: Option<f64>,
    pub grid: GridMeta,
    pub solver: SolverReport,
    pub warnings: Vec<String>,
}

impl DesignRecord {
    pub fn new(model: &ModelSpec, spec: &GridSpec, regularization: Option<f64>, sol: &DesignSolution) -> Self {
        let g = &sol.grid;
        let theta_range = match g.theta_axis() {
            ThetaAxis::Real(p) => Some((p[0], p[p.len() - 1])),
            _ => None,
        };
        Self {
            model: model.clone(),
            gamma: sol.gamma,
            lambda: sol.lambda,
            expected_run_length: sol.expected_run_length,
            regularization,
            grid: GridMeta {
                spec: spec.clone(),
                num_cells: g.num_cells(),
                anchor: g.anchor(),
                s_range: g.s_range(),
                theta_range,
            },
            solver: sol.report.clone(),
            warnings: sol.warnings.clone(),
        }
    }
}

/// One row of `rho.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub cell: usize,
    pub s: f64,
    /// Empty for the i.i.d. model.
    pub theta: Option<f64>,
    pub rho: f64,
    pub g: f64,
    pub d: f64,
    pub mask: Region,
}

/// One row of `thresholds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub theta: Option<f64>,
    #[serde(rename = "A")]
    pub upper: f64,
    #[serde(rename = "B")]
    pub lower: f64,
    pub kind: RowKind,
    pub multiple_crossings: bool,
    pub upper_at_edge: bool,
    pub lower_at_edge: bool,
}

fn theta_label(axis: &ThetaAxis, k: usize) -> Option<f64> {
    match axis {
        ThetaAxis::Unit => None,
        _ => Some(axis.value(k)),
    }
}

pub fn rho_rows(sol: &DesignSolution) -> Vec<RhoRow> {
    let g = &sol.grid;
    (0..g.num_cells())
        .map(|j| RhoRow {
            cell: j,
            s: g.s_of(j),
            theta: theta_label(g.theta_axis(), j / g.m_z()),
            rho: sol.rho[j],
            g: sol.stopping_cost[j],
            d: sol.continuation_cost[j],
            mask: sol.regions[j],
        })
        .collect()
}

pub fn threshold_rows(t: &StateThresholds) -> Vec<ThresholdRow> {
    (0..t.axis.len())
        .map(|k| ThresholdRow {
            theta: theta_label(&t.axis, k),
            upper: t.upper[k],
            lower: t.lower[k],
            kind: t.kind[k],
            multiple_crossings: t.multiple_crossings[k],
            upper_at_edge: t.upper_at_edge[k],
            lower_at_edge: t.lower_at_edge[k],
        })
        .collect()
}

/// Rebuilds a threshold table; `kind` fixes how the θ column is read.
pub fn thresholds_from_rows(rows: &[ThresholdRow], kind: ModelKind) -> Result<StateThresholds, String> {
    let axis = match kind {
        ModelKind::IidGaussian => {
            if rows.len() != 1 || rows[0].theta.is_some() {
                return Err("expected a single row with an empty θ".into());
            }
            ThetaAxis::Unit
        }
        ModelKind::TwoStateChain => {
            if rows.len() != 2 || rows[0].theta != Some(1.0) || rows[1].theta != Some(2.0) {
                return Err("expected rows for states 1 and 2".into());
            }
            ThetaAxis::States
        }
        ModelKind::Ar1 => ThetaAxis::Real(
            rows.iter()
                .map(|r| r.theta.ok_or_else(|| "missing θ value".to_string()))
                .collect::<Result<_, _>>()?,
        ),
    };
    let t = StateThresholds {
        axis,
        upper: rows.iter().map(|r| r.upper).collect(),
        lower: rows.iter().map(|r| r.lower).collect(),
        kind: rows.iter().map(|r| r.kind).collect(),
        multiple_crossings: rows.iter().map(|r| r.multiple_crossings).collect(),
        upper_at_edge: rows.iter().map(|r| r.upper_at_edge).collect(),
        lower_at_edge: rows.iter().map(|r| r.lower_at_edge).collect(),
    };
    t.validate().map_err(|e| e.to_string())?;
    Ok(t)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

/// Writes the three design artifacts into `dir`, creating it if needed.
pub fn write_design(dir: &Path, record: &DesignRecord, sol: &DesignSolution) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join(DESIGN_FILE), record)?;
    write_csv(&dir.join(RHO_FILE), &rho_rows(sol))?;
    let TestPolicy::StateDependent(t) = crate::design::extract_thresholds(sol) else {
        unreachable!("extracted thresholds are tabulated")
    };
    write_csv(&dir.join(THRESHOLDS_FILE), &threshold_rows(&t))
}

/// A design read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDesign {
    pub record: DesignRecord,
    pub rho: Vec<RhoRow>,
    pub thresholds: StateThresholds,
}

impl LoadedDesign {
    pub fn rho_values(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.rho).collect()
    }

    pub fn regions(&self) -> Vec<Region> {
        self.rho.iter().map(|r| r.mask).collect()
    }

    pub fn policy(&self) -> TestPolicy {
        TestPolicy::StateDependent(self.thresholds.clone())
    }
}

pub fn read_design(dir: &Path) -> Result<LoadedDesign, IoError> {
    let record: DesignRecord = read_json(&dir.join(DESIGN_FILE))?;
    let rho_path = dir.join(RHO_FILE);
    let rho: Vec<RhoRow> = read_csv(&rho_path)?;
    let content = |path: &Path, message: String| IoError::Content {
        path: path.to_path_buf(),
        message,
    };
    if rho.len() != record.grid.num_cells {
        return Err(content(
            &rho_path,
            format!("{} rows for {} cells", rho.len(), record.grid.num_cells),
        ));
    }
    if let Some(r) = rho.iter().enumerate().find(|(j, r)| r.cell != *j) {
        return Err(content(&rho_path, format!("row {} has cell index {}", r.0, r.1.cell)));
    }
    let t_path = dir.join(THRESHOLDS_FILE);
    let rows: Vec<ThresholdRow> = read_csv(&t_path)?;
    let thresholds = thresholds_from_rows(&rows, record.model.kind()).map_err(|m| content(&t_path, m))?;
    Ok(LoadedDesign {
        record,
        rho,
        thresholds,
    })
}
