//! Exponential collocation weights for the backward mild (variation-of-constants) step.
//!
//! On an interval `[t_k, t_k + h]` with `ρ = μ_a + μ_b` for entry `(a, b)`:
//!
//! ```text
//! P(t_k + c_i h) = e^{ρ h (1 - c_i)} P(t_{k+1}) + h Σ_j a_ij(ρh) F_j
//! P(t_k)         = e^{ρ h}           P(t_{k+1}) + h Σ_j b_j(ρh)  F_j
//! ```
//!
//! where `F_j` is the integrand at stage `c_j` and the weights are exact integrals of
//! `e^{ρ(r - s)}` against the Lagrange basis. Two stage layouts are offered: Gauss–Legendre
//! (interior stages) and Radau with the fixed stage at the left node `c = 0`, which is the
//! L-stable Radau IIA rule read in backward time. Neither evaluates the integrand at the
//! right node, so the terminal time is never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollocationRule {
    Gauss,
    #[default]
    Radau,
}

/// Gauss–Legendre nodes on `[0, 1]`.
pub fn gauss_legendre_unit(s: usize) -> Vec<f64> {
    let mut nodes = Vec::with_capacity(s);
    for i in 0..s {
        // Newton on P_s starting from the Chebyshev-like guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (s as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(s, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
    }
    nodes.sort_by(|a, b| a.total_cmp(b));
    nodes
}

/// Radau nodes on `[0, 1]` with the fixed node at `0`: `c = (1 − ξ)/2` over the roots `ξ`
/// of `P_s − P_{s−1}`.
pub fn radau_left_unit(s: usize) -> Vec<f64> {
    let g = |x: f64| legendre_with_derivative(s, x).0 - legendre_with_derivative(s - 1, x).0;
    let mut nodes = vec![0.0];
    let n = 4000;
    let mut a = -1.0;
    let mut ga = g(a);
    for i in 1..n {
        let b = -1.0 + 2.0 * i as f64 / n as f64;
        let gb = g(b);
        if ga == 0.0 {
            nodes.push(0.5 * (1.0 - a));
        } else if ga * gb < 0.0 {
            let (mut lo, mut hi, mut glo) = (a, b, ga);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let gm = g(mid);
                if (gm < 0.0) == (glo < 0.0) {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-17 {
                    break;
                }
            }
            nodes.push(0.5 * (1.0 - 0.5 * (lo + hi)));
        }
        a = b;
        ga = gb;
    }
    nodes.sort_by(|a, b| a.total_cmp(b));
    nodes
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Monomial coefficients (ascending) of the Lagrange basis polynomials on `nodes`.
pub fn lagrange_coefficients(nodes: &[f64]) -> Vec<Vec<f64>> {
    let s = nodes.len();
    (0..s)
        .map(|j| {
            let mut poly = vec![1.0];
            let mut denom = 1.0;
            for (m, &c) in nodes.iter().enumerate() {
                if m == j {
                    continue;
                }
                // poly *= (x - c)
                let mut next = vec![0.0; poly.len() + 1];
                for (p, v) in poly.iter().enumerate() {
                    next[p + 1] += v;
                    next[p] -= c * v;
                }
                poly = next;
                denom *= nodes[j] - c;
            }
            poly.iter().map(|v| v / denom).collect()
        })
        .collect()
}

/// `m_p(z) = ∫₀¹ e^{zx} x^p dx` for `p = 0..=max_p`.
pub fn exp_moments(z: f64, max_p: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_p + 1];
    if z.abs() < 2.0 {
        for (p, slot) in out.iter_mut().enumerate() {
            let mut term = 1.0; // z^n / n!
            let mut sum = 0.0;
            for n in 0..200 {
                let add = term / (n + p + 1) as f64;
                sum += add;
                if add.abs() < 1e-18 * sum.abs().max(1e-300) && n > 2 {
                    break;
                }
                term *= z / (n + 1) as f64;
            }
            *slot = sum;
        }
    } else {
        let ez = z.exp();
        out[0] = z.exp_m1() / z;
        for p in 1..=max_p {
            out[p] = (ez - p as f64 * out[p - 1]) / z;
        }
    }
    out
}

/// Scalar weights for one value of `z = ρh`, already multiplied by `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarWeights {
    pub out_exp: f64,
    pub out: Vec<f64>,
    pub stage_exp: Vec<f64>,
    /// `stage[i][j]`
    pub stage: Vec<Vec<f64>>,
}

/// Stage layout shared by every interval.
#[derive(Debug, Clone)]
pub struct CollocationScheme {
    nodes: Vec<f64>,
    lagrange: Vec<Vec<f64>>,
    /// `shifted[i][j]`: coefficients in `y` of `ℓ_j(c_i + (1 - c_i) y)`.
    shifted: Vec<Vec<Vec<f64>>>,
}

impl CollocationScheme {
    pub fn gauss(stages: usize) -> Result<Self> {
        Self::new(CollocationRule::Gauss, stages)
    }

    pub fn radau(stages: usize) -> Result<Self> {
        Self::new(CollocationRule::Radau, stages)
    }

    pub fn new(rule: CollocationRule, stages: usize) -> Result<Self> {
        if !(1..=6).contains(&stages) {
            return Err(Error::invalid(format!("collocation stages must be in 1..=6, got {stages}")));
        }
        let nodes = match rule {
            CollocationRule::Gauss => gauss_legendre_unit(stages),
            CollocationRule::Radau => radau_left_unit(stages),
        };
        let lagrange = lagrange_coefficients(&nodes);
        let shifted = nodes
            .iter()
            .map(|&c| {
                let w = 1.0 - c;
                lagrange.iter().map(|poly| taylor_shift(poly, c, w)).collect()
            })
            .collect();
        Ok(Self { nodes, lagrange, shifted })
    }

    pub fn stages(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self, rho: f64, h: f64) -> ScalarWeights {
        let s = self.stages();
        let z = rho * h;
        let m = exp_moments(z, s - 1);
        let out = self
            .lagrange
            .iter()
            .map(|poly| h * poly.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut stage = Vec::with_capacity(s);
        let mut stage_exp = Vec::with_capacity(s);
        for (i, &c) in self.nodes.iter().enumerate() {
            let w = 1.0 - c;
            stage_exp.push((z * w).exp());
            let mi = exp_moments(z * w, s - 1);
            stage.push(
                self.shifted[i]
                    .iter()
                    .map(|poly| h * w * poly.iter().zip(&mi).map(|(a, b)| a * b).sum::<f64>())
                    .collect(),
            );
        }
        ScalarWeights { out_exp: z.exp(), out, stage_exp, stage }
    }
}

/// Coefficients in `y` of `p(c + w y)`.
fn taylor_shift(poly: &[f64], c: f64, w: f64) -> Vec<f64> {
    let n = poly.len();
    let mut out = vec![0.0; n];
    for (p, &a) in poly.iter().enumerate() {
        // (c + w y)^p = Σ_q C(p,q) c^{p-q} w^q y^q
        let mut binom = 1.0;
        for q in 0..=p {
            out[q] += a * binom * c.powi((p - q) as i32) * w.powi(q as i32);
            binom = binom * (p - q) as f64 / (q + 1) as f64;
        }
    }
    out
}

/// Entrywise weight matrices for one interval.
#[derive(Debug, Clone)]
pub struct IntervalWeights {
    pub out_exp: Mat,
    pub out: Vec<Mat>,
    pub stage_exp: Vec<Mat>,
    pub stage: Vec<Vec<Mat>>,
}

impl IntervalWeights {
    pub fn new(scheme: &CollocationScheme, eigenvalues: &[f64], h: f64) -> Self {
        let m = eigenvalues.len();
        let s = scheme.stages();
        let mut out_exp = Mat::zeros(m, m);
        let mut out = vec![Mat::zeros(m, m); s];
        let mut stage_exp = vec![Mat::zeros(m, m); s];
        let mut stage = vec![vec![Mat::zeros(m, m); s]; s];
        for a in 0..m {
            for b in a..m {
                let w = scheme.weights(eigenvalues[a] + eigenvalues[b], h);
                let put = |mat: &mut Mat, v: f64| {
                    mat[(a, b)] = v;
                    mat[(b, a)] = v;
                };
                put(&mut out_exp, w.out_exp);
                for i in 0..s {
                    put(&mut out[i], w.out[i]);
                    put(&mut stage_exp[i], w.stage_exp[i]);
                    for j in 0..s {
                        put(&mut stage[i][j], w.stage[i][j]);
                    }
                }
            }
        }
        Self { out_exp, out, stage_exp, stage }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radau_nodes() {
        assert_eq!(radau_left_unit(1), vec![0.0]);
        let two = radau_left_unit(2);
        assert!(two[0] == 0.0 && (two[1] - 2.0 / 3.0).abs() < 1e-15);
        let three = radau_left_unit(3);
        let r = 6f64.sqrt() / 10.0;
        assert_eq!(three[0], 0.0);
        assert!((three[1] - (0.6 - r)).abs() < 1e-15);
        assert!((three[2] - (0.6 + r)).abs() < 1e-15);
    }

    #[test]
    fn radau_left_stage_equals_output() {
        let sch = CollocationScheme::radau(3).unwrap();
        for z in [-50.0, -1.0, 0.0] {
            let w = sch.weights(z, 0.3);
            assert!((w.stage_exp[0] - w.out_exp).abs() < 1e-15);
            for j in 0..3 {
                assert!((w.stage[0][j] - w.out[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gauss_nodes_three() {
        let c = gauss_legendre_unit(3);
        let r = 15f64.sqrt() / 10.0;
        assert!((c[0] - (0.5 - r)).abs() < 1e-15);
        assert!((c[1] - 0.5).abs() < 1e-15);
        assert!((c[2] - (0.5 + r)).abs() < 1e-15);
    }

    #[test]
    fn moments_match_quadrature() {
        for &z in &[-1e4, -300.0, -7.3, -2.0, -1.999, -0.5, 0.0, 1e-9, 0.7, 3.0] {
            let m = exp_moments(z, 4);
            for (p, got) in m.iter().enumerate() {
                // composite Simpson; for strong decay the tail beyond 60/|z| is below e^-60
                let n = 200_000;
                let f = |x: f64| (z * x).exp() * x.powi(p as i32);
                let b = if z < 0.0 { (60.0 / -z).min(1.0) } else { 1.0 };
                let h = b / n as f64;
                let mut s = f(0.0) + f(b);
                for i in 1..n {
                    s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
                }
                let want = s * h / 3.0;
                let scale = want.abs().max(1e-300);
                assert!(
                    (got - want).abs() <= 1e-9 * scale + 1e-14,
                    "z={z} p={p}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn zero_rate_reduces_to_gauss_weights() {
        let sch = CollocationScheme::gauss(3).unwrap();
        let w = sch.weights(0.0, 1.0);
        let want = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
        for (a, b) in w.out.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        // stage rows integrate constants exactly over [c_i, 1]
        for (i, row) in w.stage.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!((sum - (1.0 - sch.nodes()[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_for_polynomial_forcing() {
        // P' = -(ρ P + f(t)) backward, f quadratic: the 3-stage rule is exact.
        let sch = CollocationScheme::gauss(3).unwrap();
        let (rho, h, pend) = (-40.0, 0.3, 1.7);
        let f = |t: f64| 1.0 + 2.0 * t - 3.0 * t * t;
        let w = sch.weights(rho, h);
        let got = w.out_exp * pend
            + sch.nodes().iter().zip(&w.out).map(|(c, b)| b * f(c * h)).sum::<f64>();
        // reference: e^{ρh} pend + ∫₀ʰ e^{ρr} f(r) dr by fine Simpson
        let n = 100_000;
        let dr = h / n as f64;
        let g = |r: f64| (rho * r).exp() * f(r);
        let mut s = g(0.0) + g(h);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * dr);
        }
        let want = (rho * h).exp() * pend + s * dr / 3.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}
