//! Monte-Carlo simulation of the truncated controlled equation in mild form.
//!
//! Each grid interval is split into `steps` substeps of length `h`. One substep reads
//!
//! ```text
//! X' = e^{Ah} X + φ(h) ∘ B u + σ(h) ∘ Σ_j (C_j X + D_j u) ξ_j,     ξ_j ~ N(0, 1)
//! ```
//!
//! with `u` frozen at the left point. Under [`NoiseScheme::ExponentialEuler`] the weights are
//! `φ = e^{μh} h`, `σ = e^{μh} √h`; under [`NoiseScheme::VarianceMatched`] they are the exact
//! integrals `φ = (1 − e^{μh})/(−μ)` and `σ² = (1 − e^{2μh})/(−2μ)` of the frozen-integrand
//! stochastic convolution, which removes most of the bias in the stiff high modes.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GradedTimeGrid;
use crate::linalg::{Mat, Vector};
use crate::lyapunov::{EvalPoint, LyapunovData};
use crate::path::fmt_f64;
use crate::problem::RiccatiProblem;
use crate::riccati::{GainPath, RiccatiSolution};
use crate::rng::{fill_gaussian, path_rng};
use crate::stats::{mean_ci, pairwise_sum};

/// Squared norms above this (or non-finite) abort the run.
pub const OVERFLOW_GUARD: f64 = 1e200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScheme {
    ExponentialEuler,
    #[default]
    VarianceMatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCConfig {
    pub paths: usize,
    pub seed: u64,
    /// Substeps per grid interval.
    pub steps: usize,
    /// Number of noise channels driving the simulation; `None` uses all of them.
    pub noise_channels: Option<usize>,
    #[serde(default)]
    pub scheme: NoiseScheme,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self { paths: 10_000, seed: 20_240_601, steps: 1, noise_channels: None, scheme: NoiseScheme::default() }
    }
}

impl MCConfig {
    pub fn new(paths: usize, seed: u64, steps: usize) -> Self {
        Self { paths, seed, steps, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::invalid("paths must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.noise_channels == Some(0) {
            return Err(Error::invalid("noise_channels must be at least 1 when given"));
        }
        Ok(())
    }

    fn channels(&self, available: usize) -> usize {
        self.noise_channels.map_or(available, |n| n.min(available))
    }
}

/// Deterministic control signal `t ↦ v(t)`.
#[derive(Clone)]
pub struct OpenLoop {
    dim: usize,
    f: Arc<dyn Fn(f64) -> Vector + Send + Sync>,
}

impl std::fmt::Debug for OpenLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenLoop").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl OpenLoop {
    pub fn new(dim: usize, f: impl Fn(f64) -> Vector + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, move |_| Vector::zeros(dim))
    }

    pub fn constant(v: Vector) -> Self {
        Self::new(v.len(), move |_| v.clone())
    }

    pub fn at(&self, t: f64) -> Vector {
        (self.f)(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone)]
pub enum FeedbackLaw {
    Static(Mat),
    PerNode(GainPath),
}

impl FeedbackLaw {
    fn dims(&self) -> (usize, usize) {
        match self {
            FeedbackLaw::Static(k) => (k.nrows(), k.ncols()),
            FeedbackLaw::PerNode(g) => (g.control_dim(), g.modes()),
        }
    }

    /// Gain held on the substep starting at `t` inside interval `k` of `grid`.
    fn gain(&self, grid: &GradedTimeGrid, k: usize, t: f64) -> Mat {
        match self {
            FeedbackLaw::Static(m) => m.clone(),
            FeedbackLaw::PerNode(g) => g.gain_on_interval(interval_of(g.grid(), grid, k, t)).clone(),
        }
    }
}

fn interval_of(target: &GradedTimeGrid, sim: &GradedTimeGrid, k: usize, t: f64) -> usize {
    if target.nodes() == sim.nodes() {
        k
    } else {
        target.locate(t)
    }
}

/// `u = K(t) X + v(t)`.
#[derive(Debug, Clone)]
pub enum ControlPolicy {
    OpenLoop(OpenLoop),
    Feedback(FeedbackLaw),
    Affine { feedback: FeedbackLaw, offset: OpenLoop },
}

impl ControlPolicy {
    pub fn zero(m: usize) -> Self {
        ControlPolicy::OpenLoop(OpenLoop::zero(m))
    }

    pub fn feedback(gains: GainPath) -> Self {
        ControlPolicy::Feedback(FeedbackLaw::PerNode(gains))
    }

    pub fn control_dim(&self) -> usize {
        match self {
            ControlPolicy::OpenLoop(o) => o.dim(),
            ControlPolicy::Feedback(f) => f.dims().0,
            ControlPolicy::Affine { feedback, .. } => feedback.dims().0,
        }
    }

    fn check(&self, modes: usize, m: usize) -> Result<()> {
        let fb_ok = |f: &FeedbackLaw| f.dims() == (m, modes);
        let ok = match self {
            ControlPolicy::OpenLoop(o) => o.dim() == m,
            ControlPolicy::Feedback(f) => fb_ok(f),
            ControlPolicy::Affine { feedback, offset } => fb_ok(feedback) && offset.dim() == m,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("policy dimensions do not match control dim {m} and {modes} modes")))
        }
    }

    fn gain(&self, grid: &GradedTimeGrid, k: usize, t: f64) -> Option<Mat> {
        match self {
            ControlPolicy::OpenLoop(_) => None,
            ControlPolicy::Feedback(f) | ControlPolicy::Affine { feedback: f, .. } => Some(f.gain(grid, k, t)),
        }
    }

    fn offset(&self, t: f64) -> Option<Vector> {
        match self {
            ControlPolicy::OpenLoop(o) | ControlPolicy::Affine { offset: o, .. } => Some(o.at(t)),
            ControlPolicy::Feedback(_) => None,
        }
    }
}

/// Substep weights shared by every path.
#[derive(Debug, Clone)]
struct Substep {
    t: f64,
    h: f64,
    interval: usize,
    decay: Vec<f64>,
    phi: Vec<f64>,
    sigma: Vec<f64>,
}

fn substep_weights(mu: &[f64], h: f64, scheme: NoiseScheme) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let decay: Vec<f64> = mu.iter().map(|m| (m * h).exp()).collect();
    let (phi, sigma) = match scheme {
        NoiseScheme::ExponentialEuler => {
            (decay.iter().map(|e| e * h).collect(), decay.iter().map(|e| e * h.sqrt()).collect())
        }
        NoiseScheme::VarianceMatched => mu
            .iter()
            .map(|&m| {
                let z = m * h;
                if z.abs() < 1e-8 {
                    (h * (1.0 + 0.5 * z), (h * (1.0 + z)).sqrt())
                } else {
                    (z.exp_m1() / m, ((2.0 * z).exp_m1() / (2.0 * m)).sqrt())
                }
            })
            .unzip(),
    };
    (decay, phi, sigma)
}

/// Substeps covering `[start, T]` on `grid`; `start` need not be a node.
fn schedule(grid: &GradedTimeGrid, mu: &[f64], start: f64, mc: &MCConfig) -> Vec<Substep> {
    let nodes = grid.nodes();
    let mut out = Vec::new();
    for k in 0..grid.intervals() {
        if nodes[k + 1] <= start {
            continue;
        }
        let left = nodes[k].max(start);
        let h = (nodes[k + 1] - left) / mc.steps as f64;
        let (decay, phi, sigma) = substep_weights(mu, h, mc.scheme);
        for i in 0..mc.steps {
            out.push(Substep {
                t: left + i as f64 * h,
                h,
                interval: k,
                decay: decay.clone(),
                phi: phi.clone(),
                sigma: sigma.clone(),
            });
        }
    }
    out
}

fn stack(mats: &[Mat], rows: usize, cols: usize) -> Mat {
    let mut s = Mat::zeros(rows * mats.len(), cols);
    for (j, m) in mats.iter().enumerate() {
        s.view_mut((j * rows, 0), (rows, cols)).copy_from(m);
    }
    s
}

/// Everything the path loop needs at one substep.
#[derive(Debug, Clone)]
struct ControlStep {
    base: Substep,
    b: Mat,
    d_stack: Option<Mat>,
    q: Mat,
    r: Mat,
    gain: Option<Mat>,
    offset: Option<Vector>,
    /// `(λ, Λ)` of the reference gain path for the completion-of-squares integrand.
    reference: Option<(Mat, Mat)>,
}

struct Plan {
    steps: Vec<ControlStep>,
    c_stack: Mat,
    channels: usize,
    modes: usize,
    terminal: Mat,
}

fn build_plan(
    prob: &RiccatiProblem,
    grid: &GradedTimeGrid,
    policy: &ControlPolicy,
    mc: &MCConfig,
    reference: Option<&GainPath>,
) -> Result<Plan> {
    mc.validate()?;
    let modes = prob.modes();
    let m = prob.control_dim();
    policy.check(modes, m)?;
    if (grid.horizon() - prob.horizon()).abs() > 1e-12 * prob.horizon() {
        return Err(Error::invalid("grid horizon does not match the problem horizon"));
    }
    if let Some(r) = reference {
        if r.modes() != modes || r.control_dim() != m {
            return Err(Error::invalid("reference gains do not match the problem"));
        }
    }
    let channels = mc.channels(prob.noise_channels());
    let c_stack = stack(&prob.channels()[..channels], modes, modes);
    let nd = prob.control_noise().len().min(channels);
    let steps = schedule(grid, prob.basis().eigenvalues(), 0.0, mc)
        .into_iter()
        .map(|base| {
            let t = base.t;
            let d_stack = (nd > 0).then(|| {
                let mut ds = prob.control_noise_at(t);
                ds.truncate(nd);
                // channels without a D_j contribute nothing
                ds.resize(channels, Mat::zeros(modes, m));
                stack(&ds, modes, m)
            });
            let reference = reference.map(|r| {
                let k = interval_of(r.grid(), grid, base.interval, t);
                (r.gain_on_interval(k).clone(), r.lambda_on_interval(k).matrix().clone())
            });
            ControlStep {
                b: prob.control_operator(t).into_owned(),
                d_stack,
                q: prob.state_weight(t).into_owned(),
                r: prob.control_weight(t).into_owned(),
                gain: policy.gain(grid, base.interval, t),
                offset: policy.offset(t),
                reference,
                base,
            }
        })
        .collect();
    Ok(Plan { steps, c_stack, channels, modes, terminal: prob.terminal().matrix().clone() })
}

/// Per-path results of one simulation run.
#[derive(Debug, Clone)]
pub struct Ensemble {
    times: Vec<f64>,
    modes: usize,
    control_dim: usize,
    terminal: Vec<f64>,
    running_state: Vec<f64>,
    running_control: Vec<f64>,
    deviation: Option<Vec<f64>>,
    node_msq: Vec<f64>,
    node_msq_var: Vec<f64>,
    states: Option<Vec<f64>>,
}

impl Ensemble {
    pub fn paths(&self) -> usize {
        self.terminal.len()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Simulation nodes (grid nodes refined by the substeps).
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Path mean of `|X|²` at every simulation node.
    pub fn mean_square(&self) -> &[f64] {
        &self.node_msq
    }

    pub fn mean_square_variance(&self) -> &[f64] {
        &self.node_msq_var
    }

    /// Per-path `⟨G X_T, X_T⟩ + ∫⟨QX,X⟩ + ∫⟨Ru,u⟩`.
    pub fn path_costs(&self) -> Vec<f64> {
        (0..self.paths()).map(|i| self.terminal[i] + self.running_state[i] + self.running_control[i]).collect()
    }

    /// Per-path `∫⟨Λ(u − λX), u − λX⟩` when a reference gain path was supplied.
    pub fn path_deviations(&self) -> Option<&[f64]> {
        self.deviation.as_deref()
    }

    pub fn terminal_terms(&self) -> &[f64] {
        &self.terminal
    }

    /// Stored states, `[path][node][mode]` row-major.
    pub fn states(&self) -> Option<&[f64]> {
        self.states.as_deref()
    }

    /// `t,mean_sq,var_sq` per simulation node.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,mean_sq,var_sq")?;
        for ((t, m), v) in self.times.iter().zip(&self.node_msq).zip(&self.node_msq_var) {
            writeln!(w, "{},{},{}", fmt_f64(*t), fmt_f64(*m), fmt_f64(*v))?;
        }
        Ok(())
    }

    /// Binary layout: `b"LQSP"`, `u32` version 1, `u64` modes, `u64` paths, `u64` nodes,
    /// then `paths·nodes·modes` little-endian `f64` values, row-major `[path][node][mode]`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let states = self
            .states
            .as_ref()
            .ok_or_else(|| Error::invalid("ensemble was simulated without stored states"))?;
        w.write_all(b"LQSP")?;
        w.write_all(&1u32.to_le_bytes())?;
        for n in [self.modes, self.paths(), self.times.len()] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for v in states {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions<'a> {
    pub store_states: bool,
    /// Accumulate `∫⟨Λ(u − λX), u − λX⟩` against these gains.
    pub reference: Option<&'a GainPath>,
}

struct PathOutput {
    terminal: f64,
    state: f64,
    control: f64,
    deviation: f64,
    msq: Vec<f64>,
    states: Vec<f64>,
}

/// Simulates `mc.paths` independent paths from `x0` under `policy` on the nodes of `grid`.
pub fn simulate_paths(
    prob: &RiccatiProblem,
    grid: &GradedTimeGrid,
    x0: &Vector,
    policy: &ControlPolicy,
    mc: &MCConfig,
) -> Result<Ensemble> {
    simulate(prob, grid, x0, policy, mc, SimOptions::default())
}

pub fn simulate(
    prob: &RiccatiProblem,
    grid: &GradedTimeGrid,
    x0: &Vector,
    policy: &ControlPolicy,
    mc: &MCConfig,
    opts: SimOptions<'_>,
) -> Result<Ensemble> {
    if x0.len() != prob.modes() {
        return Err(Error::invalid("initial state dimension does not match the basis"));
    }
    let plan = build_plan(prob, grid, policy, mc, opts.reference)?;
    let outputs = (0..mc.paths)
        .into_par_iter()
        .map(|i| run_path(&plan, x0, mc.seed, i, opts.store_states))
        .collect::<Result<Vec<_>>>()?;
    let mut times: Vec<f64> = plan.steps.iter().map(|s| s.base.t).collect();
    times.push(grid.horizon());
    let nodes = times.len();
    let mut node_msq = Vec::with_capacity(nodes);
    let mut node_msq_var = Vec::with_capacity(nodes);
    let mut column = vec![0.0; outputs.len()];
    for k in 0..nodes {
        for (c, o) in column.iter_mut().zip(&outputs) {
            *c = o.msq[k];
        }
        let s = mean_ci(&column);
        node_msq.push(s.mean);
        node_msq_var.push(s.variance);
    }
    let states = opts.store_states.then(|| outputs.iter().flat_map(|o| o.states.iter().copied()).collect());
    Ok(Ensemble {
        times,
        modes: prob.modes(),
        control_dim: prob.control_dim(),
        terminal: outputs.iter().map(|o| o.terminal).collect(),
        running_state: outputs.iter().map(|o| o.state).collect(),
        running_control: outputs.iter().map(|o| o.control).collect(),
        deviation: opts.reference.map(|_| outputs.iter().map(|o| o.deviation).collect()),
        node_msq,
        node_msq_var,
        states,
    })
}

fn run_path(plan: &Plan, x0: &Vector, seed: u64, path: usize, store: bool) -> Result<PathOutput> {
    let mut rng = path_rng(seed, path);
    let modes = plan.modes;
    let mut x = x0.clone();
    let mut xn = Vector::zeros(modes);
    let mut xi = vec![0.0; plan.channels];
    let mut y = Vector::zeros(plan.channels * modes);
    let mut noise = vec![0.0; modes];
    let mut msq = Vec::with_capacity(plan.steps.len() + 1);
    let mut states = Vec::new();
    let (mut state, mut control, mut deviation) = (0.0, 0.0, 0.0);
    msq.push(x.norm_squared());
    if store {
        states.extend(x.iter());
    }
    for (n, step) in plan.steps.iter().enumerate() {
        let s = &step.base;
        let u = match (&step.gain, &step.offset) {
            (Some(k), Some(v)) => k * &x + v,
            (Some(k), None) => k * &x,
            (None, Some(v)) => v.clone(),
            (None, None) => unreachable!("policies always define a gain or an offset"),
        };
        control += s.h * u.dot(&(&step.r * &u));
        if let Some((lam, big)) = &step.reference {
            let w = &u - lam * &x;
            deviation += s.h * w.dot(&(big * &w));
        }
        let bu = &step.b * &u;
        fill_gaussian(&mut rng, 1.0, &mut xi);
        y.gemv(1.0, &plan.c_stack, &x, 0.0);
        if let Some(ds) = &step.d_stack {
            y.gemv(1.0, ds, &u, 1.0);
        }
        noise.iter_mut().for_each(|v| *v = 0.0);
        for (j, z) in xi.iter().enumerate() {
            let yj = &y.as_slice()[j * modes..(j + 1) * modes];
            for (nv, yv) in noise.iter_mut().zip(yj) {
                *nv += z * yv;
            }
        }
        for k in 0..modes {
            xn[k] = s.decay[k] * x[k] + s.phi[k] * bu[k] + s.sigma[k] * noise[k];
        }
        let q_left = x.dot(&(&step.q * &x));
        let q_right = xn.dot(&(&step.q * &xn));
        state += 0.5 * s.h * (q_left + q_right);
        std::mem::swap(&mut x, &mut xn);
        let sq = x.norm_squared();
        if !(sq <= OVERFLOW_GUARD) {
            return Err(Error::Instability { path, step: n + 1, norm: sq.sqrt() });
        }
        msq.push(sq);
        if store {
            states.extend(x.iter());
        }
    }
    let terminal = x.dot(&(&plan.terminal * &x));
    Ok(PathOutput { terminal, state, control, deviation, msq, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub terminal_term: f64,
    pub running_state_term: f64,
    pub running_control_term: f64,
    pub paths_used: usize,
}

impl CostReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "quantity,value")?;
        for (name, v) in [
            ("estimate", self.estimate),
            ("ci_halfwidth", self.ci_halfwidth),
            ("terminal_term", self.terminal_term),
            ("running_state_term", self.running_state_term),
            ("running_control_term", self.running_control_term),
            ("paths_used", self.paths_used as f64),
        ] {
            writeln!(w, "{name},{}", fmt_f64(v))?;
        }
        Ok(())
    }
}

/// Path-averaged cost of an ensemble simulated under `prob` and `policy`.
pub fn estimate_cost(prob: &RiccatiProblem, ensemble: &Ensemble, policy: &ControlPolicy) -> Result<CostReport> {
    if ensemble.modes() != prob.modes() || ensemble.control_dim() != prob.control_dim() {
        return Err(Error::invalid("ensemble dimensions do not match the problem"));
    }
    if policy.control_dim() != prob.control_dim() {
        return Err(Error::invalid("policy control dimension does not match the problem"));
    }
    let n = ensemble.paths() as f64;
    let total = mean_ci(&ensemble.path_costs());
    Ok(CostReport {
        estimate: total.mean,
        ci_halfwidth: total.ci_halfwidth,
        terminal_term: pairwise_sum(&ensemble.terminal) / n,
        running_state_term: pairwise_sum(&ensemble.running_state) / n,
        running_control_term: pairwise_sum(&ensemble.running_control) / n,
        paths_used: ensemble.paths(),
    })
}

/// Exact expectations of the discrete scheme (no sampling error).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMoments {
    pub cost: f64,
    pub terminal_term: f64,
    pub running_state_term: f64,
    pub running_control_term: f64,
    /// `E Σ h ⟨Λ(u − λX), u − λX⟩` when a reference was given, else 0.
    pub deviation: f64,
    /// `E|X|²` at every simulation node.
    pub mean_square: Vec<f64>,
}

/// Propagates the mean and second moment of the discrete scheme exactly.
///
/// With `u = K X + v`, one substep is `X' = F X + g + Σ_j σ ∘ (H_j X + h_j) ξ_j` where
/// `F = e^{Ah} + φ B K`, `g = φ ∘ B v`, `H_j = C_j + D_j K`, `h_j = D_j v`, so
/// `S' = E[X'X'ᵀ]` follows from `S = E[XXᵀ]` and `m = E X` in closed form.
pub fn expected_cost_discrete(
    prob: &RiccatiProblem,
    grid: &GradedTimeGrid,
    x0: &Vector,
    policy: &ControlPolicy,
    mc: &MCConfig,
    reference: Option<&GainPath>,
) -> Result<DiscreteMoments> {
    if x0.len() != prob.modes() {
        return Err(Error::invalid("initial state dimension does not match the basis"));
    }
    let plan = build_plan(prob, grid, policy, mc, reference)?;
    let modes = plan.modes;
    let m = prob.control_dim();
    let mut mean = x0.clone();
    let mut second = x0 * x0.transpose();
    let mut out = DiscreteMoments {
        cost: 0.0,
        terminal_term: 0.0,
        running_state_term: 0.0,
        running_control_term: 0.0,
        deviation: 0.0,
        mean_square: vec![second.trace()],
    };
    let quad = |k: &Mat, v: &Vector, w: &Mat, mean: &Vector, second: &Mat| -> f64 {
        // E[(KX + v)ᵀ W (KX + v)]
        let wk = w * k;
        (k.transpose() * &wk).component_mul(second).sum() + 2.0 * v.dot(&(&wk * mean)) + v.dot(&(w * v))
    };
    for step in &plan.steps {
        let s = &step.base;
        let k = step.gain.clone().unwrap_or_else(|| Mat::zeros(m, modes));
        let v = step.offset.clone().unwrap_or_else(|| Vector::zeros(m));
        out.running_control_term += s.h * quad(&k, &v, &step.r, &mean, &second);
        if let Some((lam, big)) = &step.reference {
            out.deviation += s.h * quad(&(&k - lam), &v, big, &mean, &second);
        }
        let phi = Vector::from_column_slice(&s.phi);
        let mut f = (&step.b * &k).component_mul(&(&phi * nalgebra::RowDVector::from_element(modes, 1.0)));
        for i in 0..modes {
            f[(i, i)] += s.decay[i];
        }
        let g = (&step.b * &v).component_mul(&phi);
        let fm = &f * &mean;
        let mut next = &f * &second * f.transpose() + &fm * g.transpose() + &g * fm.transpose() + &g * g.transpose();
        let sig = Vector::from_column_slice(&s.sigma);
        let sig2 = &sig * sig.transpose();
        let ds = step.d_stack.as_ref();
        for j in 0..plan.channels {
            let c = plan.c_stack.view((j * modes, 0), (modes, modes)).into_owned();
            let (hmat, hvec) = match ds {
                Some(d) => {
                    let dj = d.view((j * modes, 0), (modes, m)).into_owned();
                    (c + &dj * &k, &dj * &v)
                }
                None => (c, Vector::zeros(modes)),
            };
            let hm = &hmat * &mean;
            let cov = &hmat * &second * hmat.transpose()
                + &hm * hvec.transpose()
                + &hvec * hm.transpose()
                + &hvec * hvec.transpose();
            next += cov.component_mul(&sig2);
        }
        let mean_next = fm + g;
        let q_left = step.q.component_mul(&second).sum();
        let q_right = step.q.component_mul(&next).sum();
        out.running_state_term += 0.5 * s.h * (q_left + q_right);
        mean = mean_next;
        second = next;
        out.mean_square.push(second.trace());
    }
    out.terminal_term = plan.terminal.component_mul(&second).sum();
    out.cost = out.terminal_term + out.running_state_term + out.running_control_term;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueIdentity {
    /// `J(x0, u) − ⟨P_0 x0, x0⟩`
    pub lhs: f64,
    /// `E ∫⟨Λ(u − λX), u − λX⟩ ds`
    pub rhs: f64,
    pub gap: f64,
    /// 95% half-width of the paired per-path difference.
    pub ci: f64,
    pub lhs_ci: f64,
    pub rhs_ci: f64,
    /// Exact bias of the discrete scheme for `lhs − rhs`.
    pub allowance: f64,
    pub value: f64,
    pub cost: f64,
    pub passes: bool,
}

/// Paired Monte-Carlo check of `J(x0, u) − ⟨P_0 x0, x0⟩ = E ∫⟨Λ(u − λX), u − λX⟩`.
pub fn verify_value_identity(
    prob: &RiccatiProblem,
    solution: &RiccatiSolution,
    x0: &Vector,
    perturbation: &ControlPolicy,
    mc: &MCConfig,
) -> Result<ValueIdentity> {
    value_identity_with_costs(prob, solution, x0, perturbation, mc).map(|(v, _)| v)
}

/// [`verify_value_identity`] that also returns the per-path costs, so runs sharing a seed
/// can be compared on common random numbers.
pub fn value_identity_with_costs(
    prob: &RiccatiProblem,
    solution: &RiccatiSolution,
    x0: &Vector,
    perturbation: &ControlPolicy,
    mc: &MCConfig,
) -> Result<(ValueIdentity, Vec<f64>)> {
    let grid = solution.path.grid();
    let opts = SimOptions { store_states: false, reference: Some(&solution.gains) };
    let ens = simulate(prob, grid, x0, perturbation, mc, opts)?;
    let value = solution.path.initial().quad_form(x0);
    let costs = ens.path_costs();
    let devs = ens.path_deviations().expect("reference requested");
    let lhs_s: Vec<f64> = costs.iter().map(|c| c - value).collect();
    let diff: Vec<f64> = lhs_s.iter().zip(devs).map(|(a, b)| a - b).collect();
    let (l, r, d) = (mean_ci(&lhs_s), mean_ci(devs), mean_ci(&diff));
    let moments = expected_cost_discrete(prob, grid, x0, perturbation, mc, Some(&solution.gains))?;
    let allowance = (moments.cost - value - moments.deviation).abs();
    let gap = (l.mean - r.mean).abs();
    let identity = ValueIdentity {
        lhs: l.mean,
        rhs: r.mean,
        gap,
        ci: d.ci_halfwidth,
        lhs_ci: l.ci_halfwidth,
        rhs_ci: r.ci_halfwidth,
        allowance,
        value,
        cost: l.mean + value,
        passes: gap <= 3.0 * d.ci_halfwidth + allowance,
    };
    Ok((identity, costs))
}

/// Substep schedule and per-substep coefficients for `dY = (A + A0)Y ds + Σ_j Ĉ_j Y dβ^j`
/// started at `t`.
struct ForwardPlan {
    steps: Vec<(Substep, Option<Mat>, Mat, Mat)>,
    channels: usize,
}

fn forward_plan(data: &LyapunovData, grid: &GradedTimeGrid, t: f64, mc: &MCConfig) -> Result<ForwardPlan> {
    mc.validate()?;
    if (grid.horizon() - data.horizon).abs() > 1e-12 * data.horizon {
        return Err(Error::invalid("grid horizon does not match the data horizon"));
    }
    let modes = data.basis.modes();
    let mut channels = None;
    let steps = schedule(grid, data.basis.eigenvalues(), t, mc)
        .into_iter()
        .map(|s| {
            let sample = data.coefficients.sample(&EvalPoint { time: s.t, interval: s.interval, stage: None })?;
            let n = mc.channels(sample.channels.len());
            if *channels.get_or_insert(n) != n {
                return Err(Error::invalid("channel count changes over time"));
            }
            let c_stack = stack(&sample.channels[..n], modes, modes);
            Ok((s, sample.drift, c_stack, sample.source))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardPlan { steps, channels: channels.unwrap_or(0) })
}

fn forward_step(
    s: &Substep,
    drift: Option<&Mat>,
    c_stack: &Mat,
    xi: &[f64],
    y: &Vector,
    out: &mut Vector,
    scratch: &mut Vector,
) {
    let modes = y.len();
    scratch.gemv(1.0, c_stack, y, 0.0);
    let a0y = drift.map(|a| a * y);
    for k in 0..modes {
        let mut noise = 0.0;
        for (j, z) in xi.iter().enumerate() {
            noise += z * scratch[j * modes + k];
        }
        let d = a0y.as_ref().map_or(0.0, |v| v[k]);
        out[k] = s.decay[k] * y[k] + s.phi[k] * d + s.sigma[k] * noise;
    }
}

/// Per-path `⟨G Y_T, Y_T⟩ + ∫_t^T ⟨f_s Y_s, Y_s⟩ ds` for the forward evolution started at `(t, x)`.
pub fn forward_evolution_costs(
    data: &LyapunovData,
    grid: &GradedTimeGrid,
    t: f64,
    x: &Vector,
    mc: &MCConfig,
) -> Result<Vec<f64>> {
    let plan = forward_plan(data, grid, t, mc)?;
    let g = data.terminal.matrix();
    (0..mc.paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(mc.seed, path);
            let mut y = x.clone();
            let mut yn = Vector::zeros(x.len());
            let mut scratch = Vector::zeros(plan.channels * x.len());
            let mut xi = vec![0.0; plan.channels];
            let mut cost = 0.0;
            for (n, (s, drift, cs, f)) in plan.steps.iter().enumerate() {
                fill_gaussian(&mut rng, 1.0, &mut xi);
                forward_step(s, drift.as_ref(), cs, &xi, &y, &mut yn, &mut scratch);
                // source frozen at the left point keeps singular f finite
                cost += 0.5 * s.h * (y.dot(&(f * &y)) + yn.dot(&(f * &yn)));
                std::mem::swap(&mut y, &mut yn);
                let sq = y.norm_squared();
                if !(sq <= OVERFLOW_GUARD) {
                    return Err(Error::Instability { path, step: n + 1, norm: sq.sqrt() });
                }
            }
            Ok(cost + y.dot(&(g * &y)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    /// `sup_s E|Y^{n+1}_s − Y^n_s|²` for `n = 0, 1, …`.
    pub distances: Vec<f64>,
    /// Set when the distances increased on three consecutive iterates.
    pub non_contracting: bool,
}

/// Picard iteration `Y⁰ ≡ 0`, `Y^{n+1} = e^{A(·−t)}x + ∫ e^{A(·−s)}[A0 Y^n ds + Σ_j Ĉ_j Y^n dβ^j]`
/// on a common noise realization per path.
pub fn picard_forward(
    data: &LyapunovData,
    grid: &GradedTimeGrid,
    t: f64,
    x: &Vector,
    iterations: usize,
    mc: &MCConfig,
) -> Result<PicardReport> {
    if iterations < 2 {
        return Err(Error::invalid("picard_forward needs at least 2 iterations"));
    }
    if x.len() != data.basis.modes() {
        return Err(Error::invalid("state dimension does not match the basis"));
    }
    let plan = forward_plan(data, grid, t, mc)?;
    let nodes = plan.steps.len() + 1;
    let per_path = (0..mc.paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(mc.seed, path);
            let noise: Vec<Vec<f64>> = plan
                .steps
                .iter()
                .map(|_| {
                    let mut xi = vec![0.0; plan.channels];
                    fill_gaussian(&mut rng, 1.0, &mut xi);
                    xi
                })
                .collect();
            let modes = x.len();
            let mut prev = vec![Vector::zeros(modes); nodes];
            let mut dists = Vec::with_capacity(iterations * nodes);
            let mut scratch = Vector::zeros(plan.channels * modes);
            let mut inc = Vector::zeros(modes);
            for _ in 0..iterations {
                // mild map: Y_{i+1} = e^{Ah} Y_i + (increment driven by the previous iterate)
                let mut next = Vec::with_capacity(nodes);
                next.push(x.clone());
                for (i, (s, drift, cs, _)) in plan.steps.iter().enumerate() {
                    forward_step(s, drift.as_ref(), cs, &noise[i], &prev[i], &mut inc, &mut scratch);
                    let semigroup: Vector =
                        Vector::from_iterator(modes, (0..modes).map(|k| s.decay[k] * (next[i][k] - prev[i][k])));
                    let y = &inc + semigroup;
                    if !(y.norm_squared() <= OVERFLOW_GUARD) {
                        return Err(Error::Instability { path, step: i + 1, norm: y.norm() });
                    }
                    next.push(y);
                }
                dists.extend(next.iter().zip(&prev).map(|(a, b)| (a - b).norm_squared()));
                prev = next;
            }
            Ok(dists)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut distances = Vec::with_capacity(iterations - 1);
    let mut column = vec![0.0; per_path.len()];
    // iterate 0 is the distance of Y¹ from Y⁰ ≡ 0; report successive differences from Y² on
    for it in 1..iterations {
        let mut sup: f64 = 0.0;
        for k in 0..nodes {
            for (c, d) in column.iter_mut().zip(&per_path) {
                *c = d[it * nodes + k];
            }
            sup = sup.max(pairwise_sum(&column) / column.len() as f64);
        }
        distances.push(sup);
    }
    let non_contracting = distances.windows(4).any(|w| w[1] > w[0] && w[2] > w[1] && w[3] > w[2] && w[3] > 0.0);
    if non_contracting {
        log::warn!("Picard iteration is not contracting: {distances:?}");
    }
    Ok(PicardReport { distances, non_contracting })
}

/// Fits `E|X_t|² ≈ c e^{rate t}` on the simulation nodes after `burn_in`.
pub fn mean_square_rate(times: &[f64], msq: &[f64], burn_in: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(msq)
        .filter(|(t, m)| **t >= burn_in && **m > 0.0 && m.is_finite())
        .map(|(t, m)| (*t, m.ln()))
        .collect();
    crate::stats::linear_fit(&pts).map(|(slope, _)| slope)
}
