//! Coefficient bundle of one linear-quadratic control problem.

use std::borrow::Cow;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GradedTimeGrid;
use crate::linalg::{max_abs, Mat, SymOperator, SYMMETRY_TOL};
use crate::spectral::SpectralBasis;

type MatFn = Arc<dyn Fn(f64) -> Mat + Send + Sync>;

/// Matrix-valued coefficient of time.
#[derive(Clone)]
pub enum Coefficient {
    Constant(Mat),
    Varying { rows: usize, cols: usize, f: MatFn },
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Coefficient::Varying { rows, cols, .. } => write!(f, "Varying({rows}x{cols})"),
        }
    }
}

impl Coefficient {
    pub fn varying(rows: usize, cols: usize, f: impl Fn(f64) -> Mat + Send + Sync + 'static) -> Self {
        Coefficient::Varying { rows, cols, f: Arc::new(f) }
    }

    pub fn at(&self, t: f64) -> Cow<'_, Mat> {
        match self {
            Coefficient::Constant(m) => Cow::Borrowed(m),
            Coefficient::Varying { f, .. } => Cow::Owned(f(t)),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Coefficient::Constant(m) => (m.nrows(), m.ncols()),
            Coefficient::Varying { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Constant(_))
    }
}

impl From<Mat> for Coefficient {
    fn from(m: Mat) -> Self {
        Coefficient::Constant(m)
    }
}

/// Problem data `(A, B, {C_j}, {D_j}, Q, R, G)` with `A` and `{C_j}` carried by the basis.
#[derive(Debug, Clone)]
pub struct RiccatiProblem {
    basis: SpectralBasis,
    control_dim: usize,
    control_op: Coefficient,
    control_noise: Vec<Coefficient>,
    state_weight: Coefficient,
    control_weight: Coefficient,
    terminal: SymOperator,
    delta: f64,
    alpha: f64,
    horizon: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemBuilder {
    basis: SpectralBasis,
    control_dim: usize,
    control_op: Option<Coefficient>,
    control_noise: Vec<Coefficient>,
    state_weight: Option<Coefficient>,
    control_weight: Option<Coefficient>,
    terminal: Option<SymOperator>,
    delta: Option<f64>,
    alpha: f64,
    horizon: f64,
}

impl ProblemBuilder {
    pub fn control_operator(mut self, b: impl Into<Coefficient>) -> Self {
        self.control_op = Some(b.into());
        self
    }

    pub fn control_noise(mut self, d: Vec<Coefficient>) -> Self {
        self.control_noise = d;
        self
    }

    pub fn state_weight(mut self, q: impl Into<Coefficient>) -> Self {
        self.state_weight = Some(q.into());
        self
    }

    pub fn control_weight(mut self, r: impl Into<Coefficient>) -> Self {
        self.control_weight = Some(r.into());
        self
    }

    pub fn terminal_weight(mut self, g: SymOperator) -> Self {
        self.terminal = Some(g);
        self
    }

    pub fn delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn build(self) -> Result<RiccatiProblem> {
        let m = self.basis.modes();
        let u = self.control_dim;
        if u == 0 {
            return Err(Error::invalid("control dimension must be positive"));
        }
        let control_weight = self.control_weight.unwrap_or(Coefficient::Constant(Mat::identity(u, u)));
        let delta = match self.delta {
            Some(d) => d,
            None => sample_times(self.horizon, &control_weight)
                .map(|t| SymOperator::symmetrized(control_weight.at(t).into_owned()).min_eigenvalue())
                .fold(f64::INFINITY, f64::min),
        };
        let p = RiccatiProblem {
            control_op: self.control_op.unwrap_or(Coefficient::Constant(Mat::zeros(m, u))),
            control_noise: self.control_noise,
            state_weight: self.state_weight.unwrap_or(Coefficient::Constant(Mat::zeros(m, m))),
            control_weight,
            terminal: self.terminal.unwrap_or_else(|| SymOperator::zeros(m)),
            basis: self.basis,
            control_dim: u,
            delta,
            alpha: self.alpha,
            horizon: self.horizon,
        };
        p.validate()?;
        Ok(p)
    }
}

fn sample_times(horizon: f64, c: &Coefficient) -> impl Iterator<Item = f64> {
    let n = if c.is_constant() { 1 } else { 33 };
    let h = if horizon.is_finite() { horizon } else { 1.0 };
    (0..n).map(move |i| if n == 1 { 0.0 } else { h * i as f64 / (n - 1) as f64 })
}

fn check_psd(name: &str, m: &Mat, shift: f64, t: f64) -> Result<()> {
    let scale = max_abs(m).max(1.0);
    if max_abs(&(m - m.transpose())) > SYMMETRY_TOL * scale {
        return Err(Error::invalid(format!("{name} is not symmetric at t={t}")));
    }
    let min = SymOperator::symmetrized(m.clone()).min_eigenvalue();
    if min - shift < -1e-10 * scale {
        return Err(Error::invalid(if shift > 0.0 {
            format!(
                "control weight R must satisfy R >= delta*I with delta = {shift} > 0 (strict positivity); smallest eigenvalue {min:.6e} at t={t}"
            )
        } else {
            format!("{name} must be positive semidefinite; smallest eigenvalue {min:.6e} at t={t}")
        }));
    }
    Ok(())
}

impl RiccatiProblem {
    pub fn builder(basis: SpectralBasis, control_dim: usize) -> ProblemBuilder {
        ProblemBuilder {
            basis,
            control_dim,
            control_op: None,
            control_noise: Vec::new(),
            state_weight: None,
            control_weight: None,
            terminal: None,
            delta: None,
            alpha: 0.25,
            horizon: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.basis.modes();
        let u = self.control_dim;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1/2), got {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!(
                "control weight R must satisfy R >= delta*I with delta > 0 (strict positivity), got delta = {}",
                self.delta
            )));
        }
        let shape_err = |name: &str, want: (usize, usize), got: (usize, usize)| {
            Error::invalid(format!("{name} must be {}x{}, got {}x{}", want.0, want.1, got.0, got.1))
        };
        if self.control_op.shape() != (m, u) {
            return Err(shape_err("control operator B", (m, u), self.control_op.shape()));
        }
        if self.state_weight.shape() != (m, m) {
            return Err(shape_err("state weight Q", (m, m), self.state_weight.shape()));
        }
        if self.control_weight.shape() != (u, u) {
            return Err(shape_err("control weight R", (u, u), self.control_weight.shape()));
        }
        if self.terminal.dim() != m {
            return Err(shape_err("terminal weight G", (m, m), (self.terminal.dim(), self.terminal.dim())));
        }
        if self.control_noise.len() > self.basis.noise_channels() {
            return Err(Error::invalid(format!(
                "{} control-noise channels but only {} noise channels",
                self.control_noise.len(),
                self.basis.noise_channels()
            )));
        }
        for (j, d) in self.control_noise.iter().enumerate() {
            if d.shape() != (m, u) {
                return Err(shape_err(&format!("control noise D_{}", j + 1), (m, u), d.shape()));
            }
        }
        if !self.terminal.is_psd(1e-10 * self.terminal.max_norm().max(1.0)) {
            return Err(Error::invalid("terminal weight G must be positive semidefinite"));
        }
        for t in sample_times(self.horizon, &self.state_weight) {
            check_psd("state weight Q", &self.state_weight.at(t), 0.0, t)?;
        }
        for t in sample_times(self.horizon, &self.control_weight) {
            check_psd("control weight R", &self.control_weight.at(t), self.delta, t)?;
        }
        Ok(())
    }

    /// Re-checks the time-varying hypotheses at every grid node.
    pub fn validate_on_grid(&self, grid: &GradedTimeGrid) -> Result<()> {
        if !self.control_weight.is_constant() {
            for &t in grid.nodes() {
                check_psd("control weight R", &self.control_weight.at(t), self.delta, t)?;
            }
        }
        if !self.state_weight.is_constant() {
            for &t in grid.nodes() {
                check_psd("state weight Q", &self.state_weight.at(t), 0.0, t)?;
            }
        }
        Ok(())
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn modes(&self) -> usize {
        self.basis.modes()
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn noise_channels(&self) -> usize {
        self.basis.noise_channels()
    }

    pub fn channels(&self) -> &[Mat] {
        self.basis.multipliers()
    }

    pub fn control_operator(&self, t: f64) -> Cow<'_, Mat> {
        self.control_op.at(t)
    }

    pub fn control_noise(&self) -> &[Coefficient] {
        &self.control_noise
    }

    pub fn control_noise_at(&self, t: f64) -> Vec<Mat> {
        self.control_noise.iter().map(|d| d.at(t).into_owned()).collect()
    }

    pub fn state_weight(&self, t: f64) -> Cow<'_, Mat> {
        self.state_weight.at(t)
    }

    pub fn control_weight(&self, t: f64) -> Cow<'_, Mat> {
        self.control_weight.at(t)
    }

    pub fn terminal(&self) -> &SymOperator {
        &self.terminal
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_time_invariant(&self) -> bool {
        self.control_op.is_constant()
            && self.state_weight.is_constant()
            && self.control_weight.is_constant()
            && self.control_noise.iter().all(Coefficient::is_constant)
    }

    pub fn has_control_noise(&self) -> bool {
        !self.control_noise.is_empty()
    }

    /// `Σ_{j>n} sup_t ‖D_j(t)‖²` over the sampled times.
    pub fn control_noise_tail(&self, n: usize) -> f64 {
        self.control_noise
            .iter()
            .skip(n)
            .map(|d| {
                sample_times(self.horizon, d)
                    .map(|t| {
                        let dm = d.at(t);
                        SymOperator::symmetrized(dm.transpose() * dm.as_ref()).max_eigenvalue()
                    })
                    .fold(0.0, f64::max)
            })
            .sum()
    }

    pub fn with_terminal(&self, g: SymOperator) -> Result<Self> {
        let mut p = self.clone();
        p.terminal = g;
        p.validate()?;
        Ok(p)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let mut p = self.clone();
        p.horizon = horizon;
        p.validate()?;
        Ok(p)
    }

    pub fn with_weights(&self, q: Coefficient, r: Coefficient, delta: f64) -> Result<Self> {
        let mut p = self.clone();
        p.state_weight = q;
        p.control_weight = r;
        p.delta = delta;
        p.validate()?;
        Ok(p)
    }

    pub fn with_control_operator(&self, b: Coefficient) -> Result<Self> {
        let mut p = self.clone();
        p.control_op = b;
        p.validate()?;
        Ok(p)
    }

    /// Keeps the first `n` noise channels (state and control).
    pub fn with_noise_channels(&self, n: usize) -> Result<Self> {
        let mut p = self.clone();
        p.basis = self.basis.truncate_noise(n)?;
        p.control_noise.truncate(n);
        p.validate()?;
        Ok(p)
    }

    pub fn with_basis(&self, basis: SpectralBasis) -> Result<Self> {
        let mut p = self.clone();
        p.basis = basis;
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_anderson_basis;

    #[test]
    fn rejects_degenerate_control_weight() {
        let basis = build_anderson_basis(2, 2).unwrap();
        let err = RiccatiProblem::builder(basis, 2)
            .control_weight(Mat::from_diagonal_element(2, 2, 0.5))
            .delta(1.0)
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("strict positivity"), "{err}");
    }

    #[test]
    fn rejects_zero_delta() {
        let basis = build_anderson_basis(2, 2).unwrap();
        let err = RiccatiProblem::builder(basis, 1)
            .control_weight(Mat::zeros(1, 1))
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("strict positivity"));
    }

    #[test]
    fn rejects_indefinite_state_weight() {
        let basis = build_anderson_basis(2, 1).unwrap();
        let q = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(RiccatiProblem::builder(basis, 1).state_weight(q).build().is_err());
    }

    #[test]
    fn delta_defaults_to_smallest_eigenvalue() {
        let basis = build_anderson_basis(2, 1).unwrap();
        let r = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let p = RiccatiProblem::builder(basis, 2).control_weight(r).build().unwrap();
        assert!((p.delta() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn control_noise_tail() {
        let basis = build_anderson_basis(2, 3).unwrap();
        let d = |s: f64| Coefficient::Constant(Mat::from_element(2, 1, s));
        let p = RiccatiProblem::builder(basis, 1)
            .control_noise(vec![d(1.0), d(0.5), d(0.1)])
            .build()
            .unwrap();
        assert!((p.control_noise_tail(1) - (0.5 + 0.02)).abs() < 1e-12);
        assert_eq!(p.control_noise_tail(3), 0.0);
    }
}
