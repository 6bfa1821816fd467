//! Problem files.
//!
//! Two equivalent encodings are accepted. The JSON form is an object whose keys are the
//! fields of [`ProblemFile`]. The plain-text form has one `key = value` pair per line:
//!
//! ```text
//! # comment            blank lines and text after '#' are ignored
//! key = value          value is a JSON literal (number, array, "string", true/false)
//!                      or a bare word, which is read as a string
//! ```
//!
//! so `alpha = 0.25`, `preset = anderson` and `b = [[1, 0], [0, 1]]` are all valid, and every
//! plain-text file maps to exactly one JSON object. Unknown keys are rejected.
//!
//! Matrices are nested row arrays or a single number `s`, meaning `s` times the identity
//! (square shapes only).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grid::{graded_grid, GradedTimeGrid};
use crate::linalg::{Mat, SymOperator, Vector};
use crate::lyapunov::LyapunovConfig;
use crate::presets;
use crate::problem::{Coefficient, RiccatiProblem};
use crate::riccati::RiccatiConfig;
use crate::simulator::{MCConfig, NoiseScheme};
use crate::spectral::{build_anderson_basis, SpectralBasis};
use crate::collocation::CollocationRule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    FiniteHorizon,
    Are,
    NullControl,
}

/// Matrix literal: a scalar multiple of the identity or explicit rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixLit {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixLit {
    pub fn to_matrix(&self, rows: usize, cols: usize, name: &str) -> Result<Mat> {
        match self {
            MatrixLit::Scalar(s) if rows == cols => Ok(Mat::identity(rows, cols) * *s),
            MatrixLit::Scalar(_) => Err(Error::Config(format!("{name}: a scalar needs a square shape, got {rows}x{cols}"))),
            MatrixLit::Rows(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(Error::Config(format!("{name}: expected a {rows}x{cols} matrix")));
                }
                Ok(Mat::from_fn(rows, cols, |i, j| r[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Optimal,
    Zero,
    /// `u = −feedback_gain · Bᵀ X`.
    Proportional,
    /// Optimal gains plus `perturbation_size` on the leading diagonal.
    GainShift,
    /// Optimal feedback plus the constant control `perturbation_size · 1`.
    Offset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub kind: ProblemKind,
    pub preset: Option<String>,
    pub modes: usize,
    pub noise_channels: usize,
    /// Custom basis: eigenvalues (negative, strictly decreasing) and one matrix per channel.
    pub eigenvalues: Option<Vec<f64>>,
    pub multipliers: Option<Vec<MatrixLit>>,
    /// Multiplies every noise channel `C_j`.
    pub noise_scale: f64,
    pub control_dim: Option<usize>,
    pub b: Option<MatrixLit>,
    pub d: Option<Vec<MatrixLit>>,
    pub q: Option<MatrixLit>,
    pub r: Option<MatrixLit>,
    pub g: Option<MatrixLit>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub horizon: Option<f64>,
    pub intervals: usize,
    /// Initial state; defaults to the first mode.
    pub x0: Option<Vec<f64>>,
    pub paths: usize,
    pub seed: u64,
    pub steps: usize,
    pub sim_noise_channels: Option<usize>,
    pub scheme: NoiseScheme,
    pub tol: f64,
    pub max_outer: usize,
    pub stages: usize,
    pub collocation: CollocationRule,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub monotonicity_slack: f64,
    pub policy: PolicyKind,
    pub feedback_gain: f64,
    pub perturbation_size: f64,
    pub store_paths: bool,
    pub schedule: Option<Vec<f64>>,
    pub are_tol: f64,
    pub intervals_per_unit: usize,
    pub penalties: Vec<f64>,
    pub probes: usize,
    pub ac0_samples: Vec<f64>,
}

impl Default for ProblemFile {
    fn default() -> Self {
        let mc = MCConfig::default();
        let ric = RiccatiConfig::default();
        Self {
            schema_version: SCHEMA_VERSION,
            kind: ProblemKind::FiniteHorizon,
            preset: None,
            modes: 16,
            noise_channels: 16,
            eigenvalues: None,
            multipliers: None,
            noise_scale: 1.0,
            control_dim: None,
            b: None,
            d: None,
            q: None,
            r: None,
            g: None,
            delta: None,
            alpha: None,
            horizon: None,
            intervals: 200,
            x0: None,
            paths: mc.paths,
            seed: mc.seed,
            steps: 2,
            sim_noise_channels: None,
            scheme: NoiseScheme::default(),
            tol: ric.tol,
            max_outer: ric.max_outer,
            stages: ric.lyapunov.stages,
            collocation: ric.lyapunov.rule,
            inner_tol: ric.lyapunov.inner_tol,
            inner_max_iter: ric.lyapunov.inner_max_iter,
            monotonicity_slack: ric.monotonicity_slack,
            policy: PolicyKind::Optimal,
            feedback_gain: 0.0,
            perturbation_size: 0.0,
            store_paths: false,
            schedule: None,
            are_tol: 1e-8,
            intervals_per_unit: 100,
            penalties: vec![1.0, 10.0, 100.0, 1e3, 1e4],
            probes: 10,
            ac0_samples: (0..=8).map(|i| 1e-3 * 100f64.powf(i as f64 / 8.0)).collect(),
        }
    }
}

/// Parses the plain-text grammar into the equivalent JSON object.
pub fn parse_key_values(text: &str) -> Result<Map<String, Value>> {
    let mut map = Map::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Config(format!("line {}: invalid key `{key}`", lineno + 1)));
        }
        let value = value.trim();
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        if map.insert(key.to_string(), parsed).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
    }
    Ok(map)
}

fn strip_comment(line: &str) -> &str {
    // '#' inside a quoted string is kept
    let mut in_str = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

impl ProblemFile {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        Self::from_value(v)
    }

    pub fn from_key_values(s: &str) -> Result<Self> {
        Self::from_value(Value::Object(parse_key_values(s)?))
    }

    fn from_value(v: Value) -> Result<Self> {
        let f: ProblemFile = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                f.schema_version
            )));
        }
        Ok(f)
    }

    /// Loads by extension: `.json` is JSON, anything else the plain-text grammar.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_key_values(&text)
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut f = ProblemFile { preset: Some(name.to_string()), ..Default::default() };
        match name {
            "anderson" => {}
            "scalar" => {
                f.modes = 1;
                f.noise_channels = 1;
                f.intervals = 200;
                f.kind = ProblemKind::FiniteHorizon;
            }
            _ => return Err(Error::Config(format!("unknown preset `{name}`"))),
        }
        Ok(f)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn basis(&self) -> Result<SpectralBasis> {
        let basis = match (&self.eigenvalues, &self.multipliers) {
            (Some(eigs), Some(mults)) => {
                let n = eigs.len();
                let mats = mults
                    .iter()
                    .enumerate()
                    .map(|(j, m)| m.to_matrix(n, n, &format!("multipliers[{j}]")))
                    .collect::<Result<Vec<_>>>()?;
                SpectralBasis::custom(eigs.clone(), mats)?
            }
            (None, None) => build_anderson_basis(self.modes, self.noise_channels)?,
            _ => return Err(Error::Config("eigenvalues and multipliers must be given together".into())),
        };
        Ok(if self.noise_scale == 1.0 { basis } else { basis.with_noise_scale(self.noise_scale) })
    }

    /// Builds the problem: the preset (if any) first, then every literal given in the file.
    pub fn problem(&self) -> Result<RiccatiProblem> {
        let base = match &self.preset {
            Some(name) => presets::by_name(name, self.modes, self.noise_channels)
                .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))??,
            None => {
                let basis = self.basis()?;
                let m = self.control_dim.unwrap_or(basis.modes());
                RiccatiProblem::builder(basis, m).build()?
            }
        };
        let mut prob = if self.noise_scale != 1.0 && self.preset.is_some() {
            base.with_basis(base.basis().with_noise_scale(self.noise_scale))?
        } else {
            base
        };
        let (n, m) = (prob.modes(), prob.control_dim());
        let mut builder = RiccatiProblem::builder(prob.basis().clone(), m)
            .control_operator(prob.control_operator(0.0).into_owned())
            .control_noise(prob.control_noise().to_vec())
            .state_weight(prob.state_weight(0.0).into_owned())
            .control_weight(prob.control_weight(0.0).into_owned())
            .terminal_weight(prob.terminal().clone())
            .alpha(self.alpha.unwrap_or(prob.alpha()))
            .horizon(self.horizon.unwrap_or(prob.horizon()));
        if let Some(b) = &self.b {
            builder = builder.control_operator(b.to_matrix(n, m, "b")?);
        }
        if let Some(ds) = &self.d {
            let ds = ds
                .iter()
                .enumerate()
                .map(|(j, d)| Ok(Coefficient::Constant(d.to_matrix(n, m, &format!("d[{j}]"))?)))
                .collect::<Result<Vec<_>>>()?;
            builder = builder.control_noise(ds);
        }
        if let Some(q) = &self.q {
            builder = builder.state_weight(q.to_matrix(n, n, "q")?);
        }
        if let Some(r) = &self.r {
            builder = builder.control_weight(r.to_matrix(m, m, "r")?);
        }
        if let Some(g) = &self.g {
            builder = builder.terminal_weight(SymOperator::new(g.to_matrix(n, n, "g")?)?);
        }
        if let Some(delta) = self.delta {
            builder = builder.delta(delta);
        }
        prob = builder.build()?;
        Ok(prob)
    }

    pub fn grid(&self, horizon: f64, alpha: f64) -> Result<GradedTimeGrid> {
        graded_grid(horizon, self.intervals, alpha)
    }

    pub fn mc(&self) -> MCConfig {
        MCConfig {
            paths: self.paths,
            seed: self.seed,
            steps: self.steps,
            noise_channels: self.sim_noise_channels,
            scheme: self.scheme,
        }
    }

    pub fn riccati(&self) -> RiccatiConfig {
        RiccatiConfig {
            tol: self.tol,
            max_outer: self.max_outer,
            monotonicity_slack: self.monotonicity_slack,
            record_iterates: false,
            lyapunov: LyapunovConfig {
                rule: self.collocation,
                stages: self.stages,
                inner_tol: self.inner_tol,
                inner_max_iter: self.inner_max_iter,
                ..LyapunovConfig::default()
            },
        }
    }

    pub fn initial_state(&self, modes: usize) -> Result<Vector> {
        match &self.x0 {
            Some(v) if v.len() == modes => Ok(Vector::from_vec(v.clone())),
            Some(v) => Err(Error::Config(format!("x0 has {} entries, expected {modes}", v.len()))),
            None => {
                let mut x = Vector::zeros(modes);
                x[0] = 1.0;
                Ok(x)
            }
        }
    }
}
