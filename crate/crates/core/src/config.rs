//! Run configuration in a sectioned `key = value` text format.
//!
//! ```text
//! [model]
//! type = ar1          # iid | chain | ar1
//! a0 = 0
//! a1 = 1
//! sigma = 1
//! theta0 = 0
//!
//! [design]
//! gamma0 = 0.041
//! gamma1 = 0.0535
//! ```
//!
//! Comments start with `#`, or with `;` at the beginning of a line. Every error names the offending line.
//! [`RunConfig::to_ini`] writes a text that parses back to the same value.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::design::Route;
use crate::grid::GridSpec;
use crate::models::ModelSpec;
use crate::simulate::{WaldForm, DEFAULT_MAX_SAMPLES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: duplicate key `{key}` in [{section}]")]
    Duplicate { line: usize, section: String, key: String },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    Invalid { line: usize, key: String, message: String },
    #[error("missing key `{key}` in [{section}]")]
    Missing { section: String, key: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpSettings {
    pub tol: f64,
    pub max_iters: Option<usize>,
}

impl Default for LpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub runs: u64,
    pub seed: u64,
    pub max_samples: u64,
    pub wald_form: WaldForm,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            runs: 100_000,
            seed: 1,
            max_samples: DEFAULT_MAX_SAMPLES,
            wald_form: WaldForm::Classical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSettings {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![OutputFormat::Json, OutputFormat::Csv],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub gamma: (f64, f64),
    /// Regularization weight `c`; `None` disables regularization.
    pub regularization: Option<f64>,
    pub route: Route,
    pub grid: GridSpec,
    pub lp: LpSettings,
    pub sim: SimSettings,
    pub output: OutputSettings,
}

impl RunConfig {
    /// Default settings for `model` and targets `gamma`.
    pub fn new(model: ModelSpec, gamma: (f64, f64)) -> Self {
        Self {
            model,
            gamma,
            regularization: None,
            route: Route::Auto,
            grid: GridSpec::default(),
            lp: LpSettings::default(),
            sim: SimSettings::default(),
            output: OutputSettings::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        parse(text)
    }

    /// Serializes to the text format; `parse(to_ini(c)) == c`.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        match &self.model {
            ModelSpec::IidGaussian { mu, sigma } => {
                let _ = writeln!(s, "type = iid\nmu = {mu:?}\nsigma = {sigma:?}");
            }
            ModelSpec::TwoStateChain { sigma, p0, p1 } => {
                let _ = writeln!(
                    s,
                    "type = chain\nsigma = {sigma:?}\np0 = {:?}, {:?}\np1 = {:?}, {:?}; {:?}, {:?}",
                    p0[0], p0[1], p1[0][0], p1[0][1], p1[1][0], p1[1][1]
                );
            }
            ModelSpec::Ar1 { a0, a1, sigma, theta0 } => {
                let _ = writeln!(s, "type = ar1\na0 = {a0:?}\na1 = {a1:?}\nsigma = {sigma:?}\ntheta0 = {theta0:?}");
            }
        }
        let _ = writeln!(s, "\n[design]\ngamma0 = {:?}\ngamma1 = {:?}", self.gamma.0, self.gamma.1);
        if let Some(c) = self.regularization {
            let _ = writeln!(s, "regularization_c = {c:?}");
        }
        let route = match self.route {
            Route::Auto => "auto",
            Route::Monolithic => "monolithic",
            Route::Decomposition => "decomposition",
        };
        let _ = writeln!(s, "route = {route}");
        let g = &self.grid;
        let _ = writeln!(
            s,
            "\n[grid]\nm_z = {}\nm_theta = {}\nbeta = {:?}\ns_margin = {:?}",
            g.m_z, g.m_theta, g.beta, g.s_margin
        );
        if let Some((lo, hi)) = g.theta_bounds {
            let _ = writeln!(s, "theta_min = {lo:?}\ntheta_max = {hi:?}");
        }
        let _ = writeln!(s, "\n[lp]\ntol = {:?}", self.lp.tol);
        if let Some(m) = self.lp.max_iters {
            let _ = writeln!(s, "max_iters = {m}");
        }
        let form = match self.sim.wald_form {
            WaldForm::Classical => "classical",
            WaldForm::Printed => "printed",
        };
        let _ = writeln!(
            s,
            "\n[sim]\nruns = {}\nseed = {}\nmax_samples = {}\nwald_form = {form}",
            self.sim.runs, self.sim.seed, self.sim.max_samples
        );
        let formats: Vec<&str> = self
            .output
            .formats
            .iter()
            .map(|f| match f {
                OutputFormat::Json => "json",
                OutputFormat::Csv => "csv",
            })
            .collect();
        let _ = writeln!(
            s,
            "\n[output]\ndirectory = {}\nformats = {}",
            self.output.directory.display(),
            formats.join(", ")
        );
        s
    }
}

const SECTIONS: [(&str, &[&str]); 6] = [
    ("model", &["type", "mu", "sigma", "p0", "p1", "a0", "a1", "theta0"]),
    ("design", &["gamma0", "gamma1", "regularization_c", "route"]),
    ("grid", &["m_z", "m_theta", "beta", "s_margin", "theta_min", "theta_max"]),
    ("lp", &["tol", "max_iters"]),
    ("sim", &["runs", "seed", "max_samples", "wald_form"]),
    ("output", &["directory", "formats"]),
];

struct Entry {
    line: usize,
    value: String,
}

struct Table {
    entries: Vec<(String, String, Entry)>,
    /// Line of each section header, for cross-field errors.
    headers: Vec<(String, usize)>,
}

impl Table {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|(s, k, _)| s == section && k == key).map(|(_, _, e)| e)
    }

    fn header_line(&self, section: &str) -> usize {
        self.headers.iter().find(|(s, _)| s == section).map_or(0, |(_, l)| *l)
    }

    fn required<T: FromStr>(&self, section: &str, key: &str) -> Result<(T, usize), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.optional(section, key)?.ok_or_else(|| ConfigError::Missing {
            section: section.into(),
            key: key.into(),
        })
    }

    fn optional<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<(T, usize)>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.get(section, key) else {
            return Ok(None);
        };
        e.value.parse::<T>().map(|v| Some((v, e.line))).map_err(|err| ConfigError::Invalid {
            line: e.line,
            key: key.into(),
            message: err.to_string(),
        })
    }

    fn or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<(T, usize), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.optional(section, key)?.unwrap_or((default, self.header_line(section))))
    }

    fn list(&self, section: &str, key: &str, sep: char) -> Result<Option<(Vec<f64>, usize)>, ConfigError> {
        let Some(e) = self.get(section, key) else {
            return Ok(None);
        };
        let values: Result<Vec<f64>, _> = e.value.split(sep).map(|t| t.trim().parse::<f64>()).collect();
        values.map(|v| Some((v, e.line))).map_err(|err| ConfigError::Invalid {
            line: e.line,
            key: key.into(),
            message: err.to_string(),
        })
    }
}

fn tokenize(text: &str) -> Result<Table, ConfigError> {
    let mut table = Table {
        entries: Vec::new(),
        headers: Vec::new(),
    };
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        // `;` separates matrix rows inside values, so it only starts a
        // comment at the beginning of a line.
        let content = if raw.trim_start().starts_with(';') {
            ""
        } else {
            raw.split('#').next().unwrap_or("")
        };
        let t = content.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: "unterminated section header".into(),
                });
            };
            let name = name.trim().to_string();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::UnknownSection { line, section: name });
            }
            if table.headers.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("section [{name}] appears twice"),
                });
            }
            table.headers.push((name.clone(), line));
            section = Some(name);
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, found `{t}`"),
            });
        };
        let Some(sec) = section.clone() else {
            return Err(ConfigError::Syntax {
                line,
                message: "key outside of any section".into(),
            });
        };
        let key = k.trim().to_string();
        let allowed = SECTIONS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line, section: sec, key });
        }
        if table.get(&sec, &key).is_some() {
            return Err(ConfigError::Duplicate { line, section: sec, key });
        }
        table.entries.push((
            sec,
            key,
            Entry {
                line,
                value: v.trim().to_string(),
            },
        ));
    }
    Ok(table)
}

fn invalid(line: usize, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        line,
        key: key.into(),
        message: message.into(),
    }
}

fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let t = tokenize(text)?;
    let (kind, type_line): (String, usize) = t.required("model", "type")?;
    let model = match kind.as_str() {
        "iid" => {
            let (mu, _) = t.required("model", "mu")?;
            let (sigma, _) = t.required("model", "sigma")?;
            ModelSpec::IidGaussian { mu, sigma }
        }
        "chain" => {
            let (sigma, _) = t.required("model", "sigma")?;
            let (p0, l0) = t.list("model", "p0", ',')?.ok_or_else(|| ConfigError::Missing {
                section: "model".into(),
                key: "p0".into(),
            })?;
            if p0.len() != 2 {
                return Err(invalid(l0, "p0", "expected two probabilities"));
            }
            let e = t.get("model", "p1").ok_or_else(|| ConfigError::Missing {
                section: "model".into(),
                key: "p1".into(),
            })?;
            let rows: Result<Vec<Vec<f64>>, _> = e
                .value
                .split(';')
                .map(|r| r.split(',').map(|v| v.trim().parse::<f64>()).collect())
                .collect();
            let rows = rows.map_err(|err| invalid(e.line, "p1", err.to_string()))?;
            if rows.len() != 2 || rows.iter().any(|r| r.len() != 2) {
                return Err(invalid(e.line, "p1", "expected `p11, p12; p21, p22`"));
            }
            ModelSpec::TwoStateChain {
                sigma,
                p0: [p0[0], p0[1]],
                p1: [[rows[0][0], rows[0][1]], [rows[1][0], rows[1][1]]],
            }
        }
        "ar1" => {
            let (a0, _) = t.required("model", "a0")?;
            let (a1, _) = t.required("model", "a1")?;
            let (sigma, _) = t.required("model", "sigma")?;
            let (theta0, _) = t.or("model", "theta0", 0.0)?;
            ModelSpec::Ar1 { a0, a1, sigma, theta0 }
        }
        other => return Err(invalid(type_line, "type", format!("unknown model `{other}` (iid | chain | ar1)"))),
    };
    // Parameters of other models are rejected rather than ignored.
    let used: &[&str] = match model {
        ModelSpec::IidGaussian { .. } => &["type", "mu", "sigma"],
        ModelSpec::TwoStateChain { .. } => &["type", "sigma", "p0", "p1"],
        ModelSpec::Ar1 { .. } => &["type", "a0", "a1", "sigma", "theta0"],
    };
    for (s, k, e) in &t.entries {
        if s == "model" && !used.contains(&k.as_str()) {
            return Err(invalid(e.line, k, format!("not a parameter of the {kind} model")));
        }
    }
    if let Err(e) = model.validate() {
        return Err(invalid(type_line, "model", e.to_string()));
    }

    let (g0, l0): (f64, usize) = t.required("design", "gamma0")?;
    let (g1, l1): (f64, usize) = t.required("design", "gamma1")?;
    for (g, l, k) in [(g0, l0, "gamma0"), (g1, l1, "gamma1")] {
        if !(g > 0.0 && g < 1.0) {
            return Err(invalid(l, k, format!("{g} is not in (0, 1)")));
        }
    }
    let regularization = match t.optional::<f64>("design", "regularization_c")? {
        Some((c, l)) => {
            if !(c >= 0.0 && c < g0.min(g1)) {
                return Err(invalid(l, "regularization_c", format!("{c} is not in [0, min(gamma)) ")));
            }
            Some(c)
        }
        None => None,
    };
    let (route_name, rl): (String, usize) = t.or("design", "route", "auto".to_string())?;
    let route = match route_name.as_str() {
        "auto" => Route::Auto,
        "monolithic" => Route::Monolithic,
        "decomposition" => Route::Decomposition,
        other => return Err(invalid(rl, "route", format!("unknown route `{other}`"))),
    };

    let d = GridSpec::default();
    let (m_z, lz): (usize, usize) = t.or("grid", "m_z", d.m_z)?;
    if m_z < 3 || m_z % 2 == 0 {
        return Err(invalid(lz, "m_z", "must be odd and at least 3"));
    }
    let (m_theta, lt): (usize, usize) = t.or("grid", "m_theta", d.m_theta)?;
    if m_theta < 3 || m_theta % 2 == 0 {
        return Err(invalid(lt, "m_theta", "must be odd and at least 3"));
    }
    let (beta, lb): (f64, usize) = t.or("grid", "beta", d.beta)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(lb, "beta", "must be positive"));
    }
    let (s_margin, lm): (f64, usize) = t.or("grid", "s_margin", d.s_margin)?;
    if !(s_margin >= 0.0 && s_margin.is_finite()) {
        return Err(invalid(lm, "s_margin", "must be nonnegative"));
    }
    let theta_bounds = match (t.optional::<f64>("grid", "theta_min")?, t.optional::<f64>("grid", "theta_max")?) {
        (None, None) => None,
        (Some((lo, l)), Some((hi, _))) => {
            if !(lo < hi) {
                return Err(invalid(l, "theta_min", "must be below theta_max"));
            }
            Some((lo, hi))
        }
        (Some((_, l)), None) | (None, Some((_, l))) => {
            return Err(invalid(l, "theta_min", "theta_min and theta_max must be given together"))
        }
    };

    let (tol, ltol): (f64, usize) = t.or("lp", "tol", LpSettings::default().tol)?;
    if !(tol > 0.0 && tol < 1.0) {
        return Err(invalid(ltol, "tol", "must be in (0, 1)"));
    }
    let max_iters = t.optional::<usize>("lp", "max_iters")?.map(|(v, _)| v);

    let sd = SimSettings::default();
    let (runs, lr): (u64, usize) = t.or("sim", "runs", sd.runs)?;
    if runs == 0 {
        return Err(invalid(lr, "runs", "must be at least 1"));
    }
    let (seed, _) = t.or("sim", "seed", sd.seed)?;
    let (max_samples, ls): (u64, usize) = t.or("sim", "max_samples", sd.max_samples)?;
    if max_samples == 0 {
        return Err(invalid(ls, "max_samples", "must be at least 1"));
    }
    let (form, lf): (String, usize) = t.or("sim", "wald_form", "classical".to_string())?;
    let wald_form = match form.as_str() {
        "classical" => WaldForm::Classical,
        "printed" => WaldForm::Printed,
        other => return Err(invalid(lf, "wald_form", format!("unknown form `{other}` (classical | printed)"))),
    };

    let od = OutputSettings::default();
    let directory = t.get("output", "directory").map_or(od.directory, |e| PathBuf::from(&e.value));
    let formats = match t.get("output", "formats") {
        None => od.formats,
        Some(e) => e
            .value
            .split(',')
            .map(|f| match f.trim() {
                "json" => Ok(OutputFormat::Json),
                "csv" => Ok(OutputFormat::Csv),
                other => Err(invalid(e.line, "formats", format!("unknown format `{other}`"))),
            })
            .collect::<Result<_, _>>()?,
    };

    Ok(RunConfig {
        model,
        gamma: (g0, g1),
        regularization,
        route,
        grid: GridSpec {
            m_z,
            m_theta,
            beta,
            s_margin,
            theta_bounds,
        },
        lp: LpSettings { tol, max_iters },
        sim: SimSettings {
            runs,
            seed,
            max_samples,
            wald_form,
        },
        output: OutputSettings { directory, formats },
    })
}
