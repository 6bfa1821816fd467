//! Linear-quadratic optimal control of linear SPDEs with state- and control-dependent
//! space-time white noise, discretized by a sine Galerkin basis.
//!
//! The pipeline is: build a [`spectral::SpectralBasis`], describe a problem with
//! [`problem::RiccatiProblem`], solve the Riccati equation with
//! [`riccati::quasi_linearize`], and check the result by Monte-Carlo with
//! [`simulator::verify_value_identity`]. [`horizon`] covers the algebraic Riccati
//! equation and penalized null control.

// `!(x > 0.0)` is used deliberately so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod collocation;
pub mod config;
pub mod error;
pub mod grid;
pub mod horizon;
pub mod linalg;
pub mod lyapunov;
pub mod ode;
pub mod path;
pub mod presets;
pub mod problem;
pub mod riccati;
pub mod rng;
pub mod simulator;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
