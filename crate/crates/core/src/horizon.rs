//! Infinite-horizon and null-control problems built from finite-horizon Riccati solves.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{graded_grid, GradedTimeGrid};
use crate::linalg::{min_eig_of_difference, Mat, SymOperator, Vector};
use crate::path::{fmt_f64, OperatorPath};
use crate::problem::{Coefficient, RiccatiProblem};
use crate::riccati::{quasi_linearize, RiccatiConfig, RiccatiSolution};
use crate::simulator::{mean_square_rate, simulate_paths, ControlPolicy, FeedbackLaw, MCConfig};
use crate::stats::{linear_fit, power_law_fit};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AreConfig {
    /// Stop once successive `P^{T_i}(0)` differ by at most this (max-norm).
    pub tol: f64,
    /// Grid intervals per unit of window length.
    pub intervals_per_unit: usize,
    pub riccati: RiccatiConfig,
}

impl Default for AreConfig {
    fn default() -> Self {
        Self { tol: 1e-8, intervals_per_unit: 100, riccati: RiccatiConfig::default() }
    }
}

/// Default schedule `T_i = 2^i`, `i = 0..=6`.
pub fn default_schedule() -> Vec<f64> {
    (0..=6).map(|i| f64::from(1u32 << i)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AreResult {
    pub p: SymOperator,
    pub horizons_used: Vec<f64>,
    /// `‖P^{T_{i+1}}(0) − P^{T_i}(0)‖_max`
    pub convergence_history: Vec<f64>,
    pub stationarity_residual: f64,
    /// Smallest eigenvalue of `P^{T_{i+1}}(0) − P^{T_i}(0)` over the schedule.
    pub monotonicity_margin: f64,
}

fn window_solve(
    prob: &RiccatiProblem,
    terminal: &SymOperator,
    length: f64,
    cfg: &AreConfig,
) -> Result<RiccatiSolution> {
    let p = prob.with_horizon(length)?.with_terminal(terminal.clone())?;
    let k = ((length * cfg.intervals_per_unit as f64).ceil() as usize).max(2);
    let grid = graded_grid(length, k, prob.alpha())?;
    quasi_linearize(&p, &grid, &cfg.riccati)
}

/// Algebraic Riccati solution as the limit of `P^{T}(0)` with zero terminal weight.
///
/// By time invariance `P^{T_{i+1}}(0)` is the value at `0` of the window problem of
/// length `T_{i+1} − T_i` with terminal weight `P^{T_i}(0)`, so the windows are chained.
pub fn solve_are(prob: &RiccatiProblem, schedule: &[f64], cfg: &AreConfig) -> Result<AreResult> {
    if !prob.is_time_invariant() {
        return Err(Error::invalid("algebraic Riccati needs time-invariant coefficients"));
    }
    let q = SymOperator::symmetrized(prob.state_weight(0.0).into_owned());
    if !(q.min_eigenvalue() > 0.0) {
        return Err(Error::invalid("algebraic Riccati needs a positive definite state weight Q"));
    }
    if schedule.is_empty() || schedule[0] <= 0.0 || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("horizon schedule must be positive and strictly increasing"));
    }
    let modes = prob.modes();
    let mut current = SymOperator::zeros(modes);
    let mut reached = 0.0;
    let mut horizons = Vec::new();
    let mut history = Vec::new();
    let mut margin = f64::INFINITY;
    for &t in schedule {
        let next = window_solve(prob, &current, t - reached, cfg)?.path.initial().clone();
        reached = t;
        horizons.push(t);
        if horizons.len() > 1 {
            history.push(next.sub(&current).max_norm());
            let scale = current.max_norm().max(1.0);
            margin = margin.min(min_eig_of_difference(next.matrix(), current.matrix()) / scale);
        }
        current = next;
        log::debug!("ARE horizon {t}: history {history:?}");
        if history.last().is_some_and(|d| *d <= cfg.tol) {
            let extra = window_solve(prob, &current, 1.0, cfg)?.path.initial().clone();
            let residual = extra.sub(&current).max_norm();
            if residual > 100.0 * cfg.tol.max(1e-8) {
                return Err(Error::StationarityFailure { residual, limit: 100.0 * cfg.tol.max(1e-8) });
            }
            return Ok(AreResult {
                p: current,
                horizons_used: horizons,
                convergence_history: history,
                stationarity_residual: residual,
                monotonicity_margin: if margin.is_finite() { margin } else { 0.0 },
            });
        }
    }
    Err(Error::NonConvergence { iterations: horizons.len(), history })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub decay_rate: f64,
    pub stable: bool,
    /// `∫ E|X_t|² dt` over the window (trapezoid).
    pub integral: f64,
    pub diagnostic: Option<String>,
}

/// Simulates `u = K X` and fits `E|X_t|² ≈ c e^{rate·t}` after the first tenth of the window.
pub fn check_stabilizing_feedback(
    prob: &RiccatiProblem,
    k: &Mat,
    x0: &Vector,
    horizon: f64,
    intervals: usize,
    mc: &MCConfig,
) -> Result<StabilityReport> {
    if !prob.is_time_invariant() {
        return Err(Error::invalid("stabilizability check needs time-invariant coefficients"));
    }
    let p = prob.with_horizon(horizon)?;
    let grid = GradedTimeGrid::uniform(horizon, intervals)?;
    let policy = ControlPolicy::Feedback(FeedbackLaw::Static(k.clone()));
    let ens = match simulate_paths(&p, &grid, x0, &policy, mc) {
        Ok(e) => e,
        Err(Error::Instability { path, step, norm }) => {
            return Ok(StabilityReport {
                decay_rate: f64::INFINITY,
                stable: false,
                integral: f64::INFINITY,
                diagnostic: Some(format!("path {path} overflowed at step {step} (norm {norm:.3e})")),
            })
        }
        Err(e) => return Err(e),
    };
    let (t, msq) = (ens.times(), ens.mean_square());
    let integral: f64 = t.windows(2).zip(msq.windows(2)).map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1])).sum();
    if msq.iter().all(|v| *v == 0.0) {
        return Ok(StabilityReport { decay_rate: f64::NEG_INFINITY, stable: true, integral: 0.0, diagnostic: None });
    }
    let rate = mean_square_rate(t, msq, 0.1 * horizon).unwrap_or(f64::NAN);
    Ok(StabilityReport { decay_rate: rate, stable: rate < 0.0 && integral.is_finite(), integral, diagnostic: None })
}

/// Problem with `Q = I`, `R = I` and `G = n I`.
pub fn penalty_problem(prob: &RiccatiProblem, n: f64) -> Result<RiccatiProblem> {
    if !(n >= 0.0) {
        return Err(Error::invalid(format!("penalty must be non-negative, got {n}")));
    }
    let (modes, m) = (prob.modes(), prob.control_dim());
    prob.with_weights(Coefficient::Constant(Mat::identity(modes, modes)), Coefficient::Constant(Mat::identity(m, m)), 1.0)?
        .with_terminal(SymOperator::scaled_identity(modes, n))
}

/// Riccati solution of the penalized null-control problem with terminal weight `n I`.
pub fn penalty_riccati(prob: &RiccatiProblem, n: f64, grid: &GradedTimeGrid, cfg: &RiccatiConfig) -> Result<RiccatiSolution> {
    quasi_linearize(&penalty_problem(prob, n)?, grid, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NullControlVerdict {
    NullControllable,
    NotNullControllable,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct NullControlSweep {
    pub penalties: Vec<f64>,
    pub probe_times: Vec<f64>,
    /// `values_at_probe[i][k] = ⟨P^{n_i}_{t_k} x, x⟩`.
    pub values_at_probe: Vec<Vec<f64>>,
    pub terminal_msq: Vec<f64>,
    /// Slope of `log value` against `log n` over the two largest penalties, per probe.
    pub penalty_growth: Vec<f64>,
    /// Slope of `log value` against `log(T − t)` at the largest penalty on the resolved probes
    /// (reported only; close to `−1` for the scalar controllable heat mode).
    pub blowup_exponent: f64,
    pub verdict: NullControlVerdict,
}

impl NullControlSweep {
    /// Columns `n,probe_t,value,terminal_msq`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,probe_t,value,terminal_msq")?;
        for (i, n) in self.penalties.iter().enumerate() {
            for (k, t) in self.probe_times.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt_f64(*n),
                    fmt_f64(*t),
                    fmt_f64(self.values_at_probe[i][k]),
                    fmt_f64(self.terminal_msq[i])
                )?;
            }
        }
        Ok(())
    }
}

/// Probe times `T − 2^{-k}` for `k = 1..=count` that lie strictly inside the grid.
pub fn probe_times(grid: &GradedTimeGrid, count: usize) -> Vec<f64> {
    let t = grid.horizon();
    (1..=count)
        .map(|k| t - t * 0.5f64.powi(k as i32))
        .filter(|s| *s > 0.0 && *s < grid.nodes()[grid.intervals()])
        .collect()
}

/// Threshold on the penalty growth slope: linear growth (slope 1) means the terminal
/// penalty is never absorbed, saturation (slope 0) means it is.
pub const GROWTH_THRESHOLD: f64 = 0.5;

/// Penalty sweep for the null-control problem started at `x0`.
///
/// For `n → ∞` the values `⟨P^n_t x, x⟩` converge for every `t < T` (and blow up as `t → T`)
/// exactly when the system is null controllable; otherwise the penalty is never absorbed and
/// the values grow linearly in `n`. The verdict reads the growth slope in `n` at every probe
/// whose terminal layer is resolved: all saturating means null controllable, all growing
/// means not, anything else is inconclusive.
pub fn null_control_sweep(
    prob: &RiccatiProblem,
    x0: &Vector,
    penalties: &[f64],
    grid: &GradedTimeGrid,
    probes: usize,
    cfg: &RiccatiConfig,
    mc: &MCConfig,
) -> Result<NullControlSweep> {
    if penalties.is_empty() || penalties.windows(2).any(|w| w[1] <= w[0]) || penalties[0] < 0.0 {
        return Err(Error::invalid("penalties must be non-negative and strictly increasing"));
    }
    if x0.len() != prob.modes() {
        return Err(Error::invalid("initial state dimension does not match the basis"));
    }
    let probe_t = probe_times(grid, probes);
    let runs = penalties
        .par_iter()
        .map(|&n| {
            let sol = penalty_riccati(prob, n, grid, cfg)?;
            let values: Vec<f64> = probe_t.iter().map(|t| sol.path.at(*t).quad_form(x0)).collect();
            let pp = penalty_problem(prob, n)?;
            let ens = simulate_paths(&pp, grid, x0, &ControlPolicy::feedback(sol.gains.clone()), mc)?;
            let msq = *ens.mean_square().last().expect("at least one node");
            Ok((values, msq))
        })
        .collect::<Result<Vec<_>>>()?;
    let (values_at_probe, terminal_msq): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let horizon = grid.horizon();
    let last = penalties.len() - 1;
    let penalty_growth: Vec<f64> = (0..probe_t.len())
        .map(|k| {
            if last == 0 {
                return f64::NAN;
            }
            let (n0, n1) = (penalties[last - 1].max(f64::MIN_POSITIVE), penalties[last]);
            let (v0, v1) = (values_at_probe[last - 1][k], values_at_probe[last][k]);
            if v0 <= 0.0 || v1 <= 0.0 {
                return f64::NAN;
            }
            (v1 / v0).ln() / (n1 / n0).ln()
        })
        .collect();
    // probes where the terminal layer of width ~1/n is resolved for both compared penalties
    let n_max = penalties[last];
    let n_prev = if last > 0 { penalties[last - 1] } else { n_max };
    let resolved: Vec<usize> = (0..probe_t.len()).filter(|&k| n_prev * (horizon - probe_t[k]) >= 10.0).collect();
    let (taus, vals): (Vec<f64>, Vec<f64>) = probe_t
        .iter()
        .zip(&values_at_probe[last])
        .filter(|(t, _)| n_max * (horizon - **t) >= 10.0)
        .map(|(t, v)| (horizon - t, *v))
        .unzip();
    let blowup_exponent = power_law_fit(&taus, &vals).map_or(f64::NAN, |(p, _)| p);
    let verdict = verdict(resolved.iter().map(|&k| penalty_growth[k]));
    Ok(NullControlSweep { penalties: penalties.to_vec(), probe_times: probe_t, values_at_probe, terminal_msq, penalty_growth, blowup_exponent, verdict })
}

fn verdict(growth: impl Iterator<Item = f64>) -> NullControlVerdict {
    let (mut saturated, mut growing, mut other) = (0, 0, 0);
    for g in growth {
        if !g.is_finite() {
            other += 1;
        } else if g < GROWTH_THRESHOLD {
            saturated += 1;
        } else {
            growing += 1;
        }
    }
    match (saturated, growing, other) {
        (s, 0, 0) if s > 0 => NullControlVerdict::NullControllable,
        (0, g, 0) if g > 0 => NullControlVerdict::NotNullControllable,
        _ => NullControlVerdict::Inconclusive,
    }
}

/// Slope of `log E|X_T|²` against `log n`.
pub fn terminal_decay_exponent(sweep: &NullControlSweep) -> Option<f64> {
    let pts: Vec<(f64, f64)> = sweep
        .penalties
        .iter()
        .zip(&sweep.terminal_msq)
        .filter(|(n, m)| **n > 0.0 && **m > 0.0)
        .map(|(n, m)| (n.ln(), m.ln()))
        .collect();
    linear_fit(&pts).map(|(s, _)| s)
}

/// Smallest eigenvalue of `P^{n_2}_t − P^{n_1}_t` over the nodes, for checking penalty monotonicity.
pub fn penalty_monotonicity(lower: &OperatorPath, upper: &OperatorPath) -> f64 {
    lower
        .values()
        .iter()
        .zip(upper.values())
        .map(|(a, b)| min_eig_of_difference(b.matrix(), a.matrix()))
        .fold(f64::INFINITY, f64::min)
}
