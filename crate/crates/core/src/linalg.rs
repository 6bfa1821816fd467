//! Dense symmetric operators in the spectral basis.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative asymmetry accepted by [`SymOperator::new`] before exact symmetrization.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Self-adjoint operator represented by a symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymOperator {
    entries: Mat,
}

impl SymOperator {
    /// Checks symmetry within [`SYMMETRY_TOL`] (relative to the max entry) and symmetrizes.
    pub fn new(entries: Mat) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::invalid(format!(
                "operator must be a non-empty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("operator has non-finite entries"));
        }
        let scale = max_abs(&entries).max(1.0);
        let asym = max_abs(&(&entries - entries.transpose()));
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::invalid(format!(
                "operator not symmetric (asymmetry {asym:.3e})"
            )));
        }
        Ok(Self::symmetrized(entries))
    }

    /// Averages `m` with its transpose without any check.
    pub fn symmetrized(m: Mat) -> Self {
        let entries = (&m + m.transpose()) * 0.5;
        Self { entries }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: Mat::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { entries: Mat::identity(dim, dim) }
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        Self { entries: Mat::identity(dim, dim) * s }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self { entries: Mat::from_diagonal(&Vector::from_column_slice(d)) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.entries
    }

    pub fn into_matrix(self) -> Mat {
        self.entries
    }

    pub fn max_norm(&self) -> f64 {
        max_abs(&self.entries)
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn op_norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> =
            SymmetricEigen::new(self.entries.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().unwrap()
    }

    pub fn is_psd(&self, eps: f64) -> bool {
        self.min_eigenvalue() >= -eps
    }

    /// `⟨P x, x⟩`
    pub fn quad_form(&self, x: &Vector) -> f64 {
        x.dot(&(&self.entries * x))
    }

    pub fn add(&self, other: &SymOperator) -> SymOperator {
        SymOperator { entries: &self.entries + &other.entries }
    }

    pub fn sub(&self, other: &SymOperator) -> SymOperator {
        SymOperator { entries: &self.entries - &other.entries }
    }

    pub fn scale(&self, s: f64) -> SymOperator {
        SymOperator { entries: &self.entries * s }
    }

    /// Row-major upper triangle, including the diagonal.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.entries[(i, j)]);
            }
        }
        out
    }

    pub fn from_upper_triangle(dim: usize, values: &[f64]) -> Result<Self> {
        if values.len() != dim * (dim + 1) / 2 {
            return Err(Error::invalid(format!(
                "expected {} upper-triangle entries for dim {dim}, got {}",
                dim * (dim + 1) / 2,
                values.len()
            )));
        }
        let mut m = Mat::zeros(dim, dim);
        let mut it = values.iter();
        for i in 0..dim {
            for j in i..dim {
                let v = *it.next().unwrap();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(SymOperator { entries: m })
    }
}

/// Largest singular value.
pub fn op_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// `Σ_j Cⱼᵀ P Cⱼ` for square channels.
pub fn channel_congruence_sum(channels: &[Mat], p: &Mat) -> Mat {
    let n = p.nrows();
    let mut acc = Mat::zeros(n, n);
    let mut tmp = Mat::zeros(n, n);
    for c in channels {
        p.mul_to(c, &mut tmp);
        acc.gemm_tr(1.0, c, &tmp, 1.0);
    }
    acc
}

/// Smallest eigenvalue of `(a - b)`, symmetrized first.
pub fn min_eig_of_difference(a: &Mat, b: &Mat) -> f64 {
    SymOperator::symmetrized(a - b).min_eigenvalue()
}
