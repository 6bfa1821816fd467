//! Backward mild Lyapunov equations with possibly singular coefficients.
//!
//! Solves
//!
//! ```text
//! P_t = e^{A*(T-t)} G e^{A(T-t)}
//!     + ∫_t^T e^{A*(s-t)} [A0*(s) P_s + P_s A0(s) + Σ_j Ĉ_j*(s) P_s Ĉ_j(s) + f_s] e^{A(s-t)} ds
//! ```
//!
//! by a backward sweep of exponential collocation steps (Radau by default, see
//! [`crate::collocation`]). Each step is implicit in
//! its stage values; the stage system is solved by fixed-point iteration, falling back
//! to a dense linear solve when the iteration stops contracting.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::collocation::{CollocationRule, CollocationScheme, IntervalWeights};
use crate::error::{Error, Result};
use crate::grid::GradedTimeGrid;
use crate::linalg::{channel_congruence_sum, max_abs, Mat, SymOperator, Vector};
use crate::path::OperatorPath;
use crate::simulator::{forward_evolution_costs, MCConfig};
use crate::spectral::SpectralBasis;
use crate::stats::{mean_ci, power_law_fit};

/// Where coefficients are requested. `stage` is set for interior collocation points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub time: f64,
    pub interval: usize,
    pub stage: Option<usize>,
}

/// Coefficients `A0(s)`, `Ĉ_j(s)`, `f(s)` frozen at one time.
#[derive(Debug, Clone)]
pub struct CoefficientSample {
    pub drift: Option<Mat>,
    pub channels: Vec<Mat>,
    pub source: Mat,
}

impl CoefficientSample {
    /// `A0ᵀ P + P A0 + Σ_j Ĉ_jᵀ P Ĉ_j`
    pub fn apply(&self, p: &Mat) -> Mat {
        let mut out = channel_congruence_sum(&self.channels, p);
        if let Some(a0) = &self.drift {
            let pa = p * a0;
            out += &pa;
            out += pa.transpose();
        }
        out
    }

    pub fn integrand(&self, p: &Mat) -> Mat {
        self.apply(p) + &self.source
    }
}

pub trait LyapunovCoefficients: Send + Sync {
    fn sample(&self, at: &EvalPoint) -> Result<CoefficientSample>;
}

/// Time-invariant coefficients.
#[derive(Debug, Clone)]
pub struct ConstantCoefficients(pub CoefficientSample);

impl LyapunovCoefficients for ConstantCoefficients {
    fn sample(&self, _at: &EvalPoint) -> Result<CoefficientSample> {
        Ok(self.0.clone())
    }
}

/// Coefficients given by a closure of time.
pub struct FnCoefficients<F>(pub F);

impl<F> LyapunovCoefficients for FnCoefficients<F>
where
    F: Fn(f64) -> CoefficientSample + Send + Sync,
{
    fn sample(&self, at: &EvalPoint) -> Result<CoefficientSample> {
        Ok((self.0)(at.time))
    }
}

#[derive(Clone)]
pub struct LyapunovData {
    pub basis: SpectralBasis,
    pub terminal: SymOperator,
    pub alpha: f64,
    pub horizon: f64,
    pub coefficients: Arc<dyn LyapunovCoefficients>,
}

impl std::fmt::Debug for LyapunovData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LyapunovData")
            .field("modes", &self.basis.modes())
            .field("horizon", &self.horizon)
            .field("alpha", &self.alpha)
            .finish_non_exhaustive()
    }
}

impl LyapunovData {
    pub fn new(
        basis: SpectralBasis,
        terminal: SymOperator,
        alpha: f64,
        horizon: f64,
        coefficients: Arc<dyn LyapunovCoefficients>,
    ) -> Result<Self> {
        if terminal.dim() != basis.modes() {
            return Err(Error::invalid("terminal operator dimension does not match the basis"));
        }
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1/2), got {alpha}")));
        }
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        Ok(Self { basis, terminal, alpha, horizon, coefficients })
    }

    /// Constant data with no drift perturbation: `Ĉ_j = channels`, `f = source`.
    pub fn constant(
        basis: SpectralBasis,
        terminal: SymOperator,
        drift: Option<Mat>,
        channels: Vec<Mat>,
        source: SymOperator,
        alpha: f64,
        horizon: f64,
    ) -> Result<Self> {
        let sample = CoefficientSample { drift, channels, source: source.into_matrix() };
        Self::new(basis, terminal, alpha, horizon, Arc::new(ConstantCoefficients(sample)))
    }

    fn sample_node(&self, grid: &GradedTimeGrid, k: usize) -> Result<CoefficientSample> {
        let interval = k.min(grid.intervals() - 1);
        self.coefficients.sample(&EvalPoint { time: grid.nodes()[k], interval, stage: None })
    }

    /// Checks `‖A0(s)‖ ≤ c (T-s)^{-α}` and symmetry of `f` at the grid nodes before `T`.
    pub fn check_bounds(&self, grid: &GradedTimeGrid, c: f64) -> Result<()> {
        for k in 0..grid.intervals() {
            let s = self.sample_node(grid, k)?;
            let tau = self.horizon - grid.nodes()[k];
            if let Some(a0) = &s.drift {
                let norm = a0.norm();
                if norm > c * tau.powf(-self.alpha) {
                    return Err(Error::invalid(format!(
                        "drift perturbation norm {norm:.3e} exceeds c(T-s)^-alpha at s={}",
                        grid.nodes()[k]
                    )));
                }
            }
            if max_abs(&(&s.source - s.source.transpose())) > 1e-9 * max_abs(&s.source).max(1.0) {
                return Err(Error::invalid(format!("source not symmetric at s={}", grid.nodes()[k])));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovConfig {
    pub rule: CollocationRule,
    pub stages: usize,
    /// Relative tolerance of the inner fixed point, max-norm.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Largest stage system solved densely when the fixed point stalls.
    pub direct_limit: usize,
    pub overflow_guard: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self { rule: CollocationRule::Radau, stages: 3, inner_tol: 1e-10, inner_max_iter: 200, direct_limit: 1200, overflow_guard: 1e150 }
    }
}

/// Reusable solver for one `(basis, grid)` pair.
pub struct LyapunovSolver {
    eigenvalues: Vec<f64>,
    grid: GradedTimeGrid,
    scheme: CollocationScheme,
    weights: Vec<IntervalWeights>,
    config: LyapunovConfig,
}

impl LyapunovSolver {
    pub fn new(basis: &SpectralBasis, grid: &GradedTimeGrid, config: LyapunovConfig) -> Result<Self> {
        let scheme = CollocationScheme::new(config.rule, config.stages)?;
        let eigenvalues = basis.eigenvalues().to_vec();
        let weights = (0..grid.intervals())
            .into_par_iter()
            .map(|k| IntervalWeights::new(&scheme, &eigenvalues, grid.step(k)))
            .collect();
        Ok(Self { eigenvalues, grid: grid.clone(), scheme, weights, config })
    }

    pub fn grid(&self) -> &GradedTimeGrid {
        &self.grid
    }

    pub fn stage_nodes(&self) -> &[f64] {
        self.scheme.nodes()
    }

    pub fn config(&self) -> &LyapunovConfig {
        &self.config
    }

    pub fn solve(&self, data: &LyapunovData) -> Result<OperatorPath> {
        let m = self.eigenvalues.len();
        if data.basis.modes() != m {
            return Err(Error::invalid("data basis does not match solver basis"));
        }
        if (data.horizon - self.grid.horizon()).abs() > 1e-12 * data.horizon.max(1.0) {
            return Err(Error::invalid(format!(
                "grid horizon {} does not match data horizon {}",
                self.grid.horizon(),
                data.horizon
            )));
        }
        let kk = self.grid.intervals();
        let s = self.scheme.stages();
        let mut values = vec![SymOperator::zeros(m); kk + 1];
        let mut stages_out = vec![Vec::new(); kk];
        values[kk] = data.terminal.clone();
        for k in (0..kk).rev() {
            let t0 = self.grid.nodes()[k];
            let h = self.grid.step(k);
            let samples = self
                .scheme
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    data.coefficients.sample(&EvalPoint { time: t0 + c * h, interval: k, stage: Some(i) })
                })
                .collect::<Result<Vec<_>>>()?;
            for smp in &samples {
                if smp.channels.iter().any(|c| c.nrows() != m || c.ncols() != m)
                    || smp.source.nrows() != m
                    || smp.drift.as_ref().is_some_and(|d| d.nrows() != m || d.ncols() != m)
                {
                    return Err(Error::invalid("coefficient dimensions do not match the basis"));
                }
            }
            let w = &self.weights[k];
            let p_next = values[k + 1].matrix();
            let (stage_vals, integrands) = self.solve_stages(w, p_next, &samples, t0)?;
            let mut pk = w.out_exp.component_mul(p_next);
            for j in 0..s {
                pk += w.out[j].component_mul(&integrands[j]);
            }
            let norm = max_abs(&pk);
            if !norm.is_finite() || norm > self.config.overflow_guard {
                return Err(Error::Singularity(format!(
                    "solution norm {norm:.3e} exceeds the overflow guard at t={t0}"
                )));
            }
            values[k] = SymOperator::symmetrized(pk);
            stages_out[k] = stage_vals.into_iter().map(SymOperator::symmetrized).collect();
        }
        Ok(OperatorPath::with_stages(
            self.grid.clone(),
            values,
            self.scheme.nodes().to_vec(),
            stages_out,
        ))
    }

    fn solve_stages(
        &self,
        w: &IntervalWeights,
        p_next: &Mat,
        samples: &[CoefficientSample],
        t0: f64,
    ) -> Result<(Vec<Mat>, Vec<Mat>)> {
        let s = samples.len();
        let base: Vec<Mat> = w.stage_exp.iter().map(|e| e.component_mul(p_next)).collect();
        let mut stages = base.clone();
        let mut prev_diff = f64::INFINITY;
        let mut diff = f64::INFINITY;
        let mut it = 0;
        while it < self.config.inner_max_iter {
            it += 1;
            let f: Vec<Mat> = stages.iter().zip(samples).map(|(p, smp)| smp.integrand(p)).collect();
            let mut scale: f64 = 1.0;
            diff = 0.0;
            for i in 0..s {
                let mut next = base[i].clone();
                for j in 0..s {
                    next += w.stage[i][j].component_mul(&f[j]);
                }
                diff = diff.max(max_abs(&(&next - &stages[i])));
                scale = scale.max(max_abs(&next));
                stages[i] = next;
            }
            if !diff.is_finite() {
                break;
            }
            if diff <= self.config.inner_tol * scale {
                let f = stages.iter().zip(samples).map(|(p, smp)| smp.integrand(p)).collect();
                return Ok((stages, f));
            }
            if it >= 4 && diff > 0.7 * prev_diff {
                break;
            }
            prev_diff = diff;
        }
        let m = p_next.nrows();
        if s * m * (m + 1) / 2 <= self.config.direct_limit {
            let stages = direct_stage_solve(w, &base, samples)?;
            let f = stages.iter().zip(samples).map(|(p, smp)| smp.integrand(p)).collect();
            return Ok((stages, f));
        }
        log::warn!("inner fixed point stalled at t={t0} with residual {diff:.3e}");
        Err(Error::IterationLimit { iterations: it, worst_residual: diff })
    }
}

/// Solves the linear stage system `P_i − Σ_j W_ij ∘ L_j(P_j) = base_i + Σ_j W_ij ∘ f_j`.
fn direct_stage_solve(w: &IntervalWeights, base: &[Mat], samples: &[CoefficientSample]) -> Result<Vec<Mat>> {
    let s = samples.len();
    let m = base[0].nrows();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect();
    let nsym = pairs.len();
    let n = s * nsym;
    let mut sys = Mat::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for i in 0..s {
        let mut r = base[i].clone();
        for j in 0..s {
            r += w.stage[i][j].component_mul(&samples[j].source);
        }
        for (q, &(a, b)) in pairs.iter().enumerate() {
            rhs[i * nsym + q] = r[(a, b)];
        }
    }
    for j in 0..s {
        for (col, &(a, b)) in pairs.iter().enumerate() {
            let mut e = Mat::zeros(m, m);
            e[(a, b)] = 1.0;
            e[(b, a)] = 1.0;
            let le = samples[j].apply(&e);
            for i in 0..s {
                let wl = w.stage[i][j].component_mul(&le);
                for (row, &(c, d)) in pairs.iter().enumerate() {
                    sys[(i * nsym + row, j * nsym + col)] -= wl[(c, d)];
                }
            }
            sys[(j * nsym + col, j * nsym + col)] += 1.0;
        }
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singularity("stage system is singular".into()))?;
    Ok((0..s)
        .map(|i| {
            let mut p = Mat::zeros(m, m);
            for (q, &(a, b)) in pairs.iter().enumerate() {
                p[(a, b)] = sol[i * nsym + q];
                p[(b, a)] = sol[i * nsym + q];
            }
            p
        })
        .collect())
}

/// One-shot solve with the default configuration.
pub fn solve_lyapunov(data: &LyapunovData, grid: &GradedTimeGrid) -> Result<OperatorPath> {
    LyapunovSolver::new(&data.basis, grid, LyapunovConfig::default())?.solve(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub ci_halfwidth: f64,
}

/// Monte-Carlo value of `E[⟨G Y_T, Y_T⟩ + ∫_t^T ⟨f_s Y_s, Y_s⟩ ds]` where `Y` solves
/// `dY = (A + A0) Y ds + Σ_j Ĉ_j Y dβ^j`, `Y_t = x`, simulated on the grid nodes after `t`.
pub fn representation_value(
    data: &LyapunovData,
    grid: &GradedTimeGrid,
    t: f64,
    x: &Vector,
    mc: &MCConfig,
) -> Result<McEstimate> {
    if !(t >= 0.0 && t < data.horizon) {
        return Err(Error::invalid(format!("start time {t} must lie in [0, T)")));
    }
    if x.len() != data.basis.modes() {
        return Err(Error::invalid("state dimension does not match the basis"));
    }
    mc.validate()?;
    let costs = forward_evolution_costs(data, grid, t, x, mc)?;
    let est = mean_ci(&costs);
    Ok(McEstimate { estimate: est.mean, ci_halfwidth: est.ci_halfwidth })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub fitted_exponent: f64,
    pub constant: f64,
}

/// Fraction of the horizon next to `T` used by the singularity fits. Further from `T` the
/// norms follow the smooth semigroup decay, which a power of `T - s` cannot describe.
pub const TERMINAL_LAYER: f64 = 0.1;

/// Fits `‖Σ_j Ĉ_j*(s) P_s Ĉ_j(s)‖ ≈ C (T-s)^p` (operator norm) over the nodes in the
/// terminal layer.
pub fn singular_sum_bound(path: &OperatorPath, data: &LyapunovData) -> Result<ExponentFit> {
    let grid = path.grid();
    let mut taus = Vec::new();
    let mut norms = Vec::new();
    for k in 0..grid.intervals() {
        let s = data.sample_node(grid, k)?;
        let sum = channel_congruence_sum(&s.channels, path.value(k).matrix());
        taus.push(data.horizon - grid.nodes()[k]);
        norms.push(SymOperator::symmetrized(sum).op_norm());
    }
    Ok(terminal_layer_fit(&taus, &norms, data.horizon))
}

/// Power-law fit restricted to `T - s ≤ TERMINAL_LAYER · T`; all nodes if fewer than three
/// fall inside.
pub(crate) fn terminal_layer_fit(taus: &[f64], values: &[f64], horizon: f64) -> ExponentFit {
    let (x, y): (Vec<f64>, Vec<f64>) = taus
        .iter()
        .zip(values)
        .filter(|(t, _)| **t <= TERMINAL_LAYER * horizon)
        .map(|(t, v)| (*t, *v))
        .unzip();
    if x.len() >= 3 {
        fit_or_zero(&x, &y)
    } else {
        fit_or_zero(taus, values)
    }
}

fn fit_or_zero(x: &[f64], y: &[f64]) -> ExponentFit {
    if y.iter().all(|v| *v == 0.0) {
        return ExponentFit { fitted_exponent: 0.0, constant: 0.0 };
    }
    match power_law_fit(x, y) {
        Some((p, c)) => ExponentFit { fitted_exponent: p, constant: c },
        None => ExponentFit { fitted_exponent: 0.0, constant: y.iter().cloned().fold(0.0, f64::max) },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct APrioriReport {
    pub passes: bool,
    /// `max_t ‖P_t‖ / (‖G‖ + ∫_t^T ‖f_s‖ ds)`
    pub worst_ratio: f64,
}

/// Checks `‖P_t‖ ≤ C (‖G‖ + ∫_t^T ‖f_s‖ ds)` at the grid nodes.
pub fn a_priori_check(path: &OperatorPath, data: &LyapunovData, constant: f64) -> Result<APrioriReport> {
    let grid = path.grid();
    let kk = grid.intervals();
    let f_norms = (0..=kk)
        .map(|k| {
            // left-limit at T keeps singular sources finite
            let s = data.sample_node(grid, k.min(kk - 1))?;
            Ok(SymOperator::symmetrized(s.source).op_norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let g_norm = data.terminal.op_norm();
    let mut tail = 0.0;
    let mut worst: f64 = 0.0;
    for k in (0..=kk).rev() {
        if k < kk {
            tail += f_norms[k] * grid.step(k);
        }
        let p = path.value(k).op_norm();
        let denom = g_norm + tail;
        let ratio = if p == 0.0 { 0.0 } else if denom == 0.0 { f64::INFINITY } else { p / denom };
        worst = worst.max(ratio);
    }
    Ok(APrioriReport { passes: worst <= constant, worst_ratio: worst })
}
