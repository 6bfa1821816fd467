//! Named problem instances.

use std::f64::consts::PI;

use crate::error::Result;
use crate::linalg::{Mat, SymOperator};
use crate::problem::RiccatiProblem;
use crate::spectral::{build_anderson_basis, SpectralBasis};

/// Controlled Anderson model `dX = ΔX dt + u dt + X dW` on `(0, 1)` with Dirichlet conditions:
/// distributed control `B = I`, `D = 0`, `Q = I`, `R = I`, `G = I`, `α = 1/4`, `T = 1`.
pub fn anderson(modes: usize, channels: usize) -> Result<RiccatiProblem> {
    let basis = build_anderson_basis(modes, channels)?;
    RiccatiProblem::builder(basis, modes)
        .control_operator(Mat::identity(modes, modes))
        .state_weight(Mat::identity(modes, modes))
        .control_weight(Mat::identity(modes, modes))
        .terminal_weight(SymOperator::identity(modes))
        .alpha(0.25)
        .horizon(1.0)
        .build()
}

/// One heat mode `μ = −π²` with `b = c = q = r = 1`, `d = 0`, `g = 0`, `T = 1/2`.
pub fn scalar() -> Result<RiccatiProblem> {
    let basis = SpectralBasis::custom(vec![-PI * PI], vec![Mat::from_element(1, 1, 1.0)])?;
    RiccatiProblem::builder(basis, 1)
        .control_operator(Mat::from_element(1, 1, 1.0))
        .state_weight(Mat::from_element(1, 1, 1.0))
        .control_weight(Mat::from_element(1, 1, 1.0))
        .terminal_weight(SymOperator::zeros(1))
        .horizon(0.5)
        .build()
}

pub fn by_name(name: &str, modes: usize, channels: usize) -> Option<Result<RiccatiProblem>> {
    match name {
        "anderson" => Some(anderson(modes, channels)),
        "scalar" => Some(scalar()),
        _ => None,
    }
}
