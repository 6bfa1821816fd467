//! Finite-horizon Riccati equation by quasi-linearization.
//!
//! Starting from `P⁰ ≡ 0`, each iterate solves the Lyapunov equation whose drift,
//! channels and source are frozen at the previous iterate's feedback gain:
//! `A0 = B λ(s, Pᴺ)`, `Ĉ_j = C_j + D_j λ(s, Pᴺ)`, `f = Q + λᵀ R λ`. The iterates decrease
//! in the PSD order from `P¹` on, which is checked at every node and stage.

use std::io::Write;
use std::sync::Arc;

use nalgebra::Cholesky;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GradedTimeGrid;
use crate::linalg::{channel_congruence_sum, max_abs, min_eig_of_difference, op_norm, Mat, SymOperator};
use crate::lyapunov::{
    terminal_layer_fit, CoefficientSample, EvalPoint, ExponentFit, LyapunovCoefficients, LyapunovConfig, LyapunovData,
    LyapunovSolver,
};
use crate::ode::{dopri5, OdeOptions};
use crate::path::{fmt_f64, Interpolation, OperatorPath};
use crate::problem::RiccatiProblem;

/// `Λ(t, P)` and `λ(t, P)`.
#[derive(Debug, Clone)]
pub struct GainEval {
    pub lambda_op: SymOperator,
    pub gain: Mat,
    /// Bound on `‖Σ_{j>n} D_j* P C_j‖` for the channels dropped by truncation.
    pub tail_bound: f64,
}

/// `Λ = R + Σ_j D_jᵀ P D_j`, `λ = -Λ⁻¹ (Bᵀ P + Σ_j D_jᵀ P C_j)` using every channel.
pub fn lambda_operator(prob: &RiccatiProblem, t: f64, p: &SymOperator) -> Result<GainEval> {
    lambda_operator_truncated(prob, t, p, prob.noise_channels())
}

/// Like [`lambda_operator`] but keeps only the first `n` channels and reports the
/// Cauchy–Schwarz bound `(λmax Σ_{j>n} D_jᵀPD_j)^{1/2} (λmax Σ_{j>n} C_jᵀPC_j)^{1/2}` for the rest.
pub fn lambda_operator_truncated(prob: &RiccatiProblem, t: f64, p: &SymOperator, n: usize) -> Result<GainEval> {
    let pm = p.matrix();
    if p.dim() != prob.modes() {
        return Err(Error::invalid("operator dimension does not match the problem"));
    }
    let ds = prob.control_noise_at(t);
    let cs = prob.channels();
    let b = prob.control_operator(t);
    let mut lam = prob.control_weight(t).into_owned();
    let mut rhs = b.tr_mul(pm);
    let mut tail_dd = Mat::zeros(prob.control_dim(), prob.control_dim());
    let mut tail_cc = Mat::zeros(prob.modes(), prob.modes());
    for (j, d) in ds.iter().enumerate() {
        let pd = pm * d;
        if j < n {
            lam.gemm_tr(1.0, d, &pd, 1.0);
            rhs.gemm_tr(1.0, &pd, &cs[j], 1.0);
        } else {
            tail_dd.gemm_tr(1.0, d, &pd, 1.0);
        }
    }
    for c in cs.iter().skip(n) {
        tail_cc += c.transpose() * pm * c;
    }
    let lambda_op = SymOperator::symmetrized(lam);
    let floor = lambda_op.min_eigenvalue();
    if !(floor >= 0.5 * prob.delta()) {
        return Err(Error::NumericalPsd(format!(
            "Lambda has smallest eigenvalue {floor:.6e} < delta/2 = {:.6e} at t={t}",
            0.5 * prob.delta()
        )));
    }
    let chol = Cholesky::new(lambda_op.matrix().clone())
        .ok_or_else(|| Error::NumericalPsd(format!("Lambda not positive definite at t={t}")))?;
    let gain = -chol.solve(&rhs);
    let tail_bound = if n >= prob.noise_channels() {
        0.0
    } else {
        let a = SymOperator::symmetrized(tail_dd).max_eigenvalue().max(0.0);
        let c = SymOperator::symmetrized(tail_cc).max_eigenvalue().max(0.0);
        (a * c).sqrt()
    };
    Ok(GainEval { lambda_op, gain, tail_bound })
}

/// Lyapunov coefficients of the quasi-linearized step at the previous iterate.
pub struct LinearizedCoefficients {
    prob: Arc<RiccatiProblem>,
    previous: Option<Arc<OperatorPath>>,
}

impl LinearizedCoefficients {
    pub fn new(prob: Arc<RiccatiProblem>, previous: Option<Arc<OperatorPath>>) -> Self {
        Self { prob, previous }
    }

    fn previous_at(&self, at: &EvalPoint) -> SymOperator {
        match &self.previous {
            None => SymOperator::zeros(self.prob.modes()),
            Some(path) => match at.stage.and_then(|i| path.stage(at.interval, i)) {
                Some(v) => v.clone(),
                None => path.at(at.time),
            },
        }
    }
}

/// Closed-loop coefficients for gain `k`: `(B k, {C_j + D_j k}, Q + kᵀ R k)`.
pub fn closed_loop_sample(prob: &RiccatiProblem, t: f64, k: &Mat) -> CoefficientSample {
    let b = prob.control_operator(t);
    let ds = prob.control_noise_at(t);
    let channels = prob
        .channels()
        .iter()
        .enumerate()
        .map(|(j, c)| match ds.get(j) {
            Some(d) => c + d * k,
            None => c.clone(),
        })
        .collect();
    let r = prob.control_weight(t);
    let source = prob.state_weight(t).as_ref() + k.transpose() * r.as_ref() * k;
    CoefficientSample { drift: Some(b.as_ref() * k), channels, source }
}

impl LyapunovCoefficients for LinearizedCoefficients {
    fn sample(&self, at: &EvalPoint) -> Result<CoefficientSample> {
        let p = self.previous_at(at);
        let g = lambda_operator(&self.prob, at.time, &p)?;
        Ok(closed_loop_sample(&self.prob, at.time, &g.gain))
    }
}

/// Feedback gains `λ(t_k, P_{t_k})` and `Λ(t_k, P_{t_k})` at every node.
#[derive(Debug, Clone, Serialize)]
pub struct GainPath {
    grid: GradedTimeGrid,
    gains: Vec<Mat>,
    lambdas: Vec<SymOperator>,
}

impl GainPath {
    pub fn from_path(prob: &RiccatiProblem, path: &OperatorPath) -> Result<Self> {
        let grid = path.grid().clone();
        let mut gains = Vec::with_capacity(grid.nodes().len());
        let mut lambdas = Vec::with_capacity(grid.nodes().len());
        for (k, &t) in grid.nodes().iter().enumerate() {
            let g = lambda_operator(prob, t, path.value(k))?;
            gains.push(g.gain);
            lambdas.push(g.lambda_op);
        }
        Ok(Self { grid, gains, lambdas })
    }

    /// Constant gain on `grid`, with `Λ` left at `R`-free identity placeholders.
    pub fn constant(grid: GradedTimeGrid, gain: Mat, lambda: SymOperator) -> Self {
        let n = grid.nodes().len();
        Self { grid, gains: vec![gain; n], lambdas: vec![lambda; n] }
    }

    pub fn new(grid: GradedTimeGrid, gains: Vec<Mat>, lambdas: Vec<SymOperator>) -> Result<Self> {
        if gains.len() != grid.nodes().len() || lambdas.len() != gains.len() {
            return Err(Error::invalid("gain path length does not match the grid"));
        }
        Ok(Self { grid, gains, lambdas })
    }

    pub fn grid(&self) -> &GradedTimeGrid {
        &self.grid
    }

    pub fn gains(&self) -> &[Mat] {
        &self.gains
    }

    pub fn lambdas(&self) -> &[SymOperator] {
        &self.lambdas
    }

    /// Gain held on `[t_k, t_{k+1})` (left node; the terminal node is never used).
    pub fn gain_on_interval(&self, k: usize) -> &Mat {
        &self.gains[k.min(self.grid.intervals() - 1)]
    }

    pub fn lambda_on_interval(&self, k: usize) -> &SymOperator {
        &self.lambdas[k.min(self.grid.intervals() - 1)]
    }

    pub fn control_dim(&self) -> usize {
        self.gains[0].nrows()
    }

    pub fn modes(&self) -> usize {
        self.gains[0].ncols()
    }

    /// Gains with `delta` added at every node.
    pub fn perturbed(&self, delta: &Mat) -> GainPath {
        GainPath {
            grid: self.grid.clone(),
            gains: self.gains.iter().map(|g| g + delta).collect(),
            lambdas: self.lambdas.clone(),
        }
    }

    /// Fits `‖λ(t)‖ ≈ c (T - t)^p` (operator norm) over the terminal layer.
    pub fn norm_exponent(&self) -> ExponentFit {
        let t_end = self.grid.horizon();
        let kk = self.grid.intervals();
        let taus: Vec<f64> = self.grid.nodes()[..kk].iter().map(|t| t_end - t).collect();
        let norms: Vec<f64> = self.gains[..kk].iter().map(op_norm).collect();
        terminal_layer_fit(&taus, &norms, t_end)
    }

    /// One row per node: `t`, then the row-major gain matrix.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (m, n) = (self.control_dim(), self.modes());
        let mut header = vec!["t".to_string()];
        for i in 0..m {
            for j in 0..n {
                header.push(format!("k_{i}_{j}"));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for (t, g) in self.grid.nodes().iter().zip(&self.gains) {
            let mut row = vec![fmt_f64(*t)];
            for i in 0..m {
                for j in 0..n {
                    row.push(fmt_f64(g[(i, j)]));
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RiccatiConfig {
    /// Relative stopping tolerance on `sup_k ‖P^{N+1}_k − P^N_k‖_max`.
    pub tol: f64,
    pub max_outer: usize,
    /// Relative eigenvalue slack for the monotonicity and positivity certificates.
    pub monotonicity_slack: f64,
    pub record_iterates: bool,
    pub lyapunov: LyapunovConfig,
}

impl Default for RiccatiConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_outer: 60,
            monotonicity_slack: 1e-9,
            record_iterates: false,
            lyapunov: LyapunovConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub path: OperatorPath,
    pub gains: GainPath,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// `P¹, P², …` when recording was requested.
    pub iterates: Vec<OperatorPath>,
    /// Largest mismatch between the two equivalent integrand forms at sampled nodes.
    pub form_residual: f64,
}

/// Runs the quasi-linearized sequence to convergence.
pub fn quasi_linearize(prob: &RiccatiProblem, grid: &GradedTimeGrid, cfg: &RiccatiConfig) -> Result<RiccatiSolution> {
    if !(cfg.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if cfg.max_outer == 0 {
        return Err(Error::invalid("max_outer must be at least 1"));
    }
    prob.validate_on_grid(grid)?;
    let solver = LyapunovSolver::new(prob.basis(), grid, cfg.lyapunov)?;
    let shared = Arc::new(prob.with_horizon(grid.horizon())?);
    let mut previous: Option<Arc<OperatorPath>> = None;
    let mut history = Vec::new();
    let mut iterates = Vec::new();
    for n in 1..=cfg.max_outer {
        let coeffs = LinearizedCoefficients::new(shared.clone(), previous.clone());
        let data = LyapunovData::new(
            prob.basis().clone(),
            prob.terminal().clone(),
            prob.alpha(),
            grid.horizon(),
            Arc::new(coeffs),
        )?;
        let next = solver.solve(&data)?;
        check_psd_path(&next, cfg.monotonicity_slack, n)?;
        let residual = match &previous {
            None => next.sup_max_norm(),
            Some(prev) => {
                if n >= 2 {
                    check_monotone(prev, &next, cfg.monotonicity_slack, n)?;
                }
                next.max_distance(prev)
            }
        };
        history.push(residual);
        log::debug!("quasi-linearization iterate {n}: residual {residual:.3e}");
        if cfg.record_iterates {
            iterates.push(next.clone());
        }
        let scale = next.sup_max_norm().max(1.0);
        if residual <= cfg.tol * scale {
            let gains = GainPath::from_path(prob, &next)?;
            let form_residual = form_mismatch(prob, &next)?;
            return Ok(RiccatiSolution {
                path: next,
                gains,
                iterations: n,
                residual_history: history,
                iterates,
                form_residual,
            });
        }
        previous = Some(Arc::new(next));
    }
    Err(Error::NonConvergence { iterations: cfg.max_outer, history })
}

fn for_each_value(path: &OperatorPath, mut f: impl FnMut(&SymOperator, Option<usize>, usize) -> Result<()>) -> Result<()> {
    for (k, v) in path.values().iter().enumerate() {
        f(v, None, k)?;
    }
    for k in 0..path.grid().intervals() {
        for i in 0..path.stage_nodes().len() {
            if let Some(v) = path.stage(k, i) {
                f(v, Some(i), k)?;
            }
        }
    }
    Ok(())
}

fn check_psd_path(path: &OperatorPath, slack: f64, n: usize) -> Result<()> {
    for_each_value(path, |v, stage, k| {
        let min = v.min_eigenvalue();
        if min < -slack * v.max_norm().max(1.0) {
            return Err(Error::InternalConsistency(format!(
                "iterate {n} not PSD at node {k} (stage {stage:?}): eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    })
}

fn check_monotone(prev: &OperatorPath, next: &OperatorPath, slack: f64, n: usize) -> Result<()> {
    for k in 0..prev.values().len() {
        let (a, b) = (prev.value(k), next.value(k));
        let min = min_eig_of_difference(a.matrix(), b.matrix());
        if min < -slack * a.max_norm().max(1.0) {
            return Err(Error::InternalConsistency(format!(
                "monotonicity violated between iterates {} and {n} at node {k}: eigenvalue {min:.3e}",
                n - 1
            )));
        }
    }
    Ok(())
}

/// Smallest eigenvalue of `Pᴺ_t − Pᴺ⁺¹_t` over all nodes, scaled by `max(1, ‖Pᴺ_t‖)`.
pub fn monotonicity_margin(prev: &OperatorPath, next: &OperatorPath) -> f64 {
    (0..prev.values().len())
        .map(|k| {
            let (a, b) = (prev.value(k), next.value(k));
            min_eig_of_difference(a.matrix(), b.matrix()) / a.max_norm().max(1.0)
        })
        .fold(f64::INFINITY, f64::min)
}

/// The two integrand forms, `ΣCᵀPC + Q − λᵀΛλ` and `B̂ᵀP + PB̂ + ΣĈᵀPĈ + Q + λᵀRλ`.
pub fn riccati_integrands(prob: &RiccatiProblem, t: f64, p: &SymOperator) -> Result<(Mat, Mat)> {
    let g = lambda_operator(prob, t, p)?;
    let pm = p.matrix();
    let q = prob.state_weight(t);
    let lam = &g.gain;
    let first = channel_congruence_sum(prob.channels(), pm) + q.as_ref()
        - lam.transpose() * g.lambda_op.matrix() * lam;
    let second = closed_loop_sample(prob, t, lam).integrand(pm);
    Ok((first, second))
}

fn form_mismatch(prob: &RiccatiProblem, path: &OperatorPath) -> Result<f64> {
    let nodes = path.grid().nodes();
    let count = 10.min(nodes.len());
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let k = i * (nodes.len() - 1) / count.max(2).saturating_sub(1).max(1);
        let k = k.min(nodes.len() - 1);
        let p = path.value(k);
        let (a, b) = riccati_integrands(prob, nodes[k], p)?;
        worst = worst.max(max_abs(&(a - b)) / (1.0 + p.max_norm()).powi(2));
    }
    Ok(worst)
}

/// `F(s, K, P) = (BK)ᵀP + PBK + Σ_j (C_j + D_j K)ᵀ P (C_j + D_j K) + Kᵀ R K`.
pub fn completion_functional(prob: &RiccatiProblem, t: f64, k: &Mat, p: &Mat) -> Mat {
    let s = closed_loop_sample(prob, t, k);
    let q = prob.state_weight(t);
    s.integrand(p) - q.as_ref()
}

/// Max-norm residual of `F(K) = F(λ) + (K − λ)ᵀ Λ (K − λ)`.
pub fn completion_identity_check(prob: &RiccatiProblem, p: &SymOperator, k: &Mat, t: f64) -> Result<f64> {
    let g = lambda_operator(prob, t, p)?;
    let lhs = completion_functional(prob, t, k, p.matrix());
    let dk = k - &g.gain;
    let rhs = completion_functional(prob, t, &g.gain, p.matrix()) + dk.transpose() * g.lambda_op.matrix() * &dk;
    Ok(max_abs(&(lhs - rhs)))
}

/// Largest mode count accepted by [`direct_riccati_oracle`].
pub const ORACLE_MAX_MODES: usize = 16;

/// Integrates `-P' = A*P + PA + ΣC*PC + Q − λ*Λλ` backward from `G` with adaptive
/// Dormand–Prince steps, reporting on a uniform grid of `fine_steps` intervals.
pub fn direct_riccati_oracle(prob: &RiccatiProblem, fine_steps: usize) -> Result<OperatorPath> {
    let m = prob.modes();
    if m > ORACLE_MAX_MODES {
        return Err(Error::invalid(format!("oracle limited to {ORACLE_MAX_MODES} modes, got {m}")));
    }
    if fine_steps == 0 {
        return Err(Error::invalid("fine_steps must be positive"));
    }
    let horizon = prob.horizon();
    let mu = prob.basis().eigenvalues().to_vec();
    let grid = GradedTimeGrid::uniform(horizon, fine_steps)?;
    // integrate in τ = T − t
    let taus: Vec<f64> = grid.nodes().iter().rev().map(|t| horizon - t).collect();
    let y0: Vec<f64> = prob.terminal().matrix().iter().copied().collect();
    let rhs = |tau: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let t = (horizon - tau).max(0.0);
        let p = SymOperator::symmetrized(Mat::from_column_slice(m, m, y));
        let g = lambda_operator(prob, t, &p)?;
        let pm = p.matrix();
        let mut d = channel_congruence_sum(prob.channels(), pm) + prob.state_weight(t).as_ref()
            - g.gain.transpose() * g.lambda_op.matrix() * &g.gain;
        for a in 0..m {
            for b in 0..m {
                d[(a, b)] += (mu[a] + mu[b]) * pm[(a, b)];
            }
        }
        dy.copy_from_slice(d.as_slice());
        Ok(())
    };
    let states = dopri5(rhs, 0.0, &y0, &taus, OdeOptions::default())?;
    let values = states
        .into_iter()
        .rev()
        .map(|y| SymOperator::symmetrized(Mat::from_column_slice(m, m, &y)))
        .collect();
    OperatorPath::new(grid, values, Interpolation::Linear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::graded_grid;
    use crate::problem::Coefficient;
    use crate::spectral::SpectralBasis;

    fn scalar(b: f64, c: f64, d: f64, r: f64) -> RiccatiProblem {
        let basis = SpectralBasis::custom(vec![-1.0], vec![Mat::from_element(1, 1, c)]).unwrap();
        let mut builder = RiccatiProblem::builder(basis, 1)
            .control_operator(Mat::from_element(1, 1, b))
            .control_weight(Mat::from_element(1, 1, r));
        if d != 0.0 {
            builder = builder.control_noise(vec![Coefficient::Constant(Mat::from_element(1, 1, d))]);
        }
        builder.build().unwrap()
    }

    #[test]
    fn lambda_scalar_arithmetic() {
        let prob = scalar(1.0, 1.0, 1.0, 1.0);
        let g = lambda_operator(&prob, 0.0, &SymOperator::scaled_identity(1, 2.0)).unwrap();
        assert!((g.lambda_op.matrix()[(0, 0)] - 3.0).abs() < 1e-15);
        assert!((g.gain[(0, 0)] + 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_without_control_noise() {
        let prob = scalar(2.0, 1.0, 0.0, 4.0);
        let g = lambda_operator(&prob, 0.0, &SymOperator::scaled_identity(1, 3.0)).unwrap();
        assert_eq!(g.lambda_op.matrix()[(0, 0)], 4.0);
        assert!((g.gain[(0, 0)] + 2.0 * 3.0 / 4.0).abs() < 1e-15);
        let z = lambda_operator(&prob, 0.0, &SymOperator::zeros(1)).unwrap();
        assert_eq!(z.gain[(0, 0)], 0.0);
    }

    #[test]
    fn lambda_rejects_broken_operator() {
        // strongly indefinite P drives Λ below δ/2
        let prob = scalar(1.0, 1.0, 1.0, 1.0);
        let r = lambda_operator(&prob, 0.0, &SymOperator::scaled_identity(1, -0.9));
        assert!(matches!(r, Err(Error::NumericalPsd(_))));
    }

    #[test]
    fn truncated_lambda_reports_tail() {
        let basis = SpectralBasis::custom(
            vec![-1.0, -4.0],
            vec![Mat::identity(2, 2), Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
        )
        .unwrap();
        let d = |s: f64| Coefficient::Constant(Mat::from_element(2, 1, s));
        let prob = RiccatiProblem::builder(basis, 1).control_noise(vec![d(1.0), d(0.5)]).build().unwrap();
        let p = SymOperator::identity(2);
        assert_eq!(lambda_operator(&prob, 0.0, &p).unwrap().tail_bound, 0.0);
        let t = lambda_operator_truncated(&prob, 0.0, &p, 1).unwrap();
        // λmax(DᵀD) = 0.5, λmax(CᵀC) = 1
        assert!((t.tail_bound - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_converges_immediately() {
        let prob = scalar(1.0, 1.0, 0.0, 1.0).with_horizon(0.5).unwrap();
        let grid = graded_grid(0.5, 20, 0.25).unwrap();
        let sol = quasi_linearize(&prob, &grid, &RiccatiConfig::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.path.sup_max_norm(), 0.0);
        assert!(sol.gains.gains().iter().all(|g| g[(0, 0)] == 0.0));
    }

    #[test]
    fn non_convergence_reports_history() {
        let prob = scalar(1.0, 1.0, 0.0, 1.0)
            .with_weights(Coefficient::Constant(Mat::identity(1, 1)), Coefficient::Constant(Mat::identity(1, 1)), 1.0)
            .unwrap();
        let grid = graded_grid(1.0, 20, 0.25).unwrap();
        let cfg = RiccatiConfig { max_outer: 1, ..Default::default() };
        match quasi_linearize(&prob, &grid, &cfg) {
            Err(Error::NonConvergence { iterations, history }) => {
                assert_eq!(iterations, 1);
                assert_eq!(history.len(), 1);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn completion_identity_at_minimizer_and_zero() {
        let prob = scalar(1.3, 0.7, 0.4, 2.0)
            .with_weights(Coefficient::Constant(Mat::identity(1, 1)), Coefficient::Constant(Mat::from_element(1, 1, 2.0)), 2.0)
            .unwrap();
        let p = SymOperator::scaled_identity(1, 1.7);
        let lam = lambda_operator(&prob, 0.0, &p).unwrap().gain;
        assert!(completion_identity_check(&prob, &p, &lam, 0.0).unwrap() < 1e-13);
        let k = Mat::from_element(1, 1, 0.9);
        let f0 = completion_functional(&prob, 0.0, &k, &Mat::zeros(1, 1));
        assert!((f0[(0, 0)] - 0.9 * 2.0 * 0.9).abs() < 1e-14);
        assert!(completion_identity_check(&prob, &SymOperator::zeros(1), &k, 0.0).unwrap() < 1e-14);
    }

    #[test]
    fn oracle_zero_data() {
        let prob = scalar(1.0, 1.0, 0.0, 1.0);
        let path = direct_riccati_oracle(&prob, 10).unwrap();
        assert_eq!(path.sup_max_norm(), 0.0);
    }
}
