//! Sine-basis Galerkin discretization of the Dirichlet heat operator on `[0, 1]`.
//!
//! With `e_n(y) = √2 sin(nπy)` the generator is diagonal, `A e_k = μ_k e_k` with
//! `μ_k = -(kπ)²`, so the semigroup acts entrywise on matrices. The noise channel
//! `C_j φ = e_j φ` of the Anderson model becomes the matrix of triple products
//! `(C_j)_{kl} = ∫₀¹ e_j e_k e_l dy`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, Mat, SymOperator, Vector, SYMMETRY_TOL};
use crate::stats::power_law_fit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
    multipliers: Vec<Mat>,
}

/// `∫₀¹ sin(nπy) dy` for integer `n` (any sign).
fn sine_integral(n: i64) -> f64 {
    if n % 2 == 0 {
        0.0
    } else {
        2.0 / (n as f64 * PI)
    }
}

/// Closed form of `∫₀¹ e_j e_k e_l dy` via product-to-sum reduction.
pub fn triple_sine_product(j: usize, k: usize, l: usize) -> f64 {
    let (j, k, l) = (j as i64, k as i64, l as i64);
    if (j + k + l) % 2 == 0 {
        return 0.0;
    }
    // sin a sin b sin c = ¼[sin(a+b-c) + sin(a-b+c) + sin(-a+b+c) - sin(a+b+c)]
    let s = sine_integral(j + k - l) + sine_integral(j - k + l) + sine_integral(-j + k + l)
        - sine_integral(j + k + l);
    2.0 * SQRT_2 * 0.25 * s
}

/// Anderson basis with `M` sine modes and `N` multiplicative noise channels.
pub fn build_anderson_basis(modes: usize, channels: usize) -> Result<SpectralBasis> {
    if modes == 0 || channels == 0 {
        return Err(Error::invalid(format!(
            "mode and channel counts must be positive, got M={modes}, N={channels}"
        )));
    }
    let eigenvalues = (1..=modes).map(|k| -(k as f64 * PI).powi(2)).collect();
    let multipliers = (1..=channels)
        .map(|j| Mat::from_fn(modes, modes, |k, l| triple_sine_product(j, k + 1, l + 1)))
        .collect();
    Ok(SpectralBasis { eigenvalues, multipliers })
}

impl SpectralBasis {
    /// Basis with explicit generator eigenvalues and symmetric channel matrices.
    pub fn custom(eigenvalues: Vec<f64>, multipliers: Vec<Mat>) -> Result<Self> {
        let m = eigenvalues.len();
        if m == 0 {
            return Err(Error::invalid("basis needs at least one mode"));
        }
        if eigenvalues.iter().any(|v| !(v.is_finite() && *v < 0.0)) {
            return Err(Error::invalid("generator eigenvalues must be finite and negative"));
        }
        if eigenvalues.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::invalid("generator eigenvalues must be strictly decreasing"));
        }
        for (j, c) in multipliers.iter().enumerate() {
            if c.nrows() != m || c.ncols() != m {
                return Err(Error::invalid(format!("channel {} is not {m}x{m}", j + 1)));
            }
            let scale = max_abs(c).max(1.0);
            if max_abs(&(c - c.transpose())) > SYMMETRY_TOL * scale {
                return Err(Error::invalid(format!("channel {} is not symmetric", j + 1)));
            }
        }
        Ok(SpectralBasis { eigenvalues, multipliers })
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn noise_channels(&self) -> usize {
        self.multipliers.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn multipliers(&self) -> &[Mat] {
        &self.multipliers
    }

    /// Same generator, channels multiplied by `factor`.
    pub fn with_noise_scale(&self, factor: f64) -> SpectralBasis {
        SpectralBasis {
            eigenvalues: self.eigenvalues.clone(),
            multipliers: self.multipliers.iter().map(|c| c * factor).collect(),
        }
    }

    /// Keeps only the first `n` channels.
    pub fn truncate_noise(&self, n: usize) -> Result<SpectralBasis> {
        if n == 0 || n > self.noise_channels() {
            return Err(Error::invalid(format!(
                "cannot truncate {} channels to {n}",
                self.noise_channels()
            )));
        }
        Ok(SpectralBasis {
            eigenvalues: self.eigenvalues.clone(),
            multipliers: self.multipliers[..n].to_vec(),
        })
    }

    /// Diagonal of `e^{tA}`.
    pub fn semigroup_diagonal(&self, t: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|mu| (mu * t).exp()).collect()
    }

    /// `e^{tA} x`.
    pub fn apply_semigroup(&self, t: f64, x: &Vector) -> Vector {
        let d = self.semigroup_diagonal(t);
        Vector::from_fn(x.len(), |k, _| d[k] * x[k])
    }

    /// Dense matrix of the generator.
    pub fn generator(&self) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(&self.eigenvalues))
    }
}

/// `e^{A* t} X e^{A t}`, entrywise `e^{μ_k t} X_{kl} e^{μ_l t}`.
pub fn semigroup_sandwich(basis: &SpectralBasis, t: f64, x: &SymOperator) -> Result<SymOperator> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("semigroup time must be non-negative, got {t}")));
    }
    if x.dim() != basis.modes() {
        return Err(Error::invalid(format!(
            "operator dim {} does not match {} modes",
            x.dim(),
            basis.modes()
        )));
    }
    let d = basis.semigroup_diagonal(t);
    let m = x.matrix();
    Ok(SymOperator::symmetrized(Mat::from_fn(m.nrows(), m.ncols(), |k, l| d[k] * m[(k, l)] * d[l])))
}

/// `Σ_j |e^{At} C_j x|²` for one probe vector.
pub fn ac0_profile(basis: &SpectralBasis, t: f64, x: &Vector) -> f64 {
    let d = basis.semigroup_diagonal(t);
    basis
        .multipliers
        .iter()
        .map(|c| {
            let y = c * x;
            y.iter().zip(&d).map(|(v, s)| (v * s).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Worst case of [`ac0_profile`] over unit vectors: `λ_max(Σ_j C_jᵀ e^{2At} C_j)`.
pub fn ac0_sup(basis: &SpectralBasis, t: f64) -> f64 {
    let m = basis.modes();
    let d2: Vec<f64> = basis.semigroup_diagonal(t).iter().map(|v| v * v).collect();
    let mut acc = Mat::zeros(m, m);
    for c in &basis.multipliers {
        let scaled = Mat::from_fn(m, m, |k, l| d2[k] * c[(k, l)]);
        acc.gemm_tr(1.0, c, &scaled, 1.0);
    }
    SymOperator::symmetrized(acc).max_eigenvalue().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ac0Report {
    pub fitted_exponent: f64,
    pub constant: f64,
    /// Whether `fitted_exponent ≥ -2α - margin`.
    pub passes: bool,
}

/// Default slack on the fitted exponent.
pub const AC0_MARGIN: f64 = 0.1;

/// Fits `sup_{|x|=1} Σ_j |e^{At}C_j x|² ≈ c t^p` over the sample times.
pub fn verify_ac0(basis: &SpectralBasis, t_samples: &[f64], alpha: f64) -> Result<Ac0Report> {
    if t_samples.is_empty() {
        return Err(Error::invalid("no sample times"));
    }
    if t_samples.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::invalid("sample times must be positive"));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1/2), got {alpha}")));
    }
    let values: Vec<f64> = t_samples.iter().map(|&t| ac0_sup(basis, t)).collect();
    let (fitted_exponent, constant) = if values.iter().all(|v| *v == 0.0) {
        (0.0, 0.0)
    } else if t_samples.len() == 1 {
        (0.0, values[0])
    } else {
        power_law_fit(t_samples, &values).unwrap_or((0.0, values[0]))
    };
    Ok(Ac0Report {
        fitted_exponent,
        constant,
        passes: fitted_exponent >= -2.0 * alpha - AC0_MARGIN,
    })
}
