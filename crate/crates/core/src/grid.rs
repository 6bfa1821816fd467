//! Time grids graded toward the terminal time.
//!
//! Nodes follow `t_k = T (1 - (1 - k/K)^γ)` with `γ = max(1, 1/(1 - 2α))`, so the
//! spacing near `T` shrinks like `(T - t)^{1 - 1/γ}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedTimeGrid {
    horizon: f64,
    gamma: f64,
    nodes: Vec<f64>,
}

/// Grading exponent used for a weight singularity of order `2α`.
pub fn grading_exponent(alpha: f64) -> f64 {
    (1.0 / (1.0 - 2.0 * alpha)).max(1.0)
}

/// Builds the graded grid on `[0, T]` with `K` intervals.
pub fn graded_grid(horizon: f64, intervals: usize, alpha: f64) -> Result<GradedTimeGrid> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if intervals < 2 {
        return Err(Error::invalid(format!("need at least 2 intervals, got {intervals}")));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1/2), got {alpha}")));
    }
    GradedTimeGrid::with_exponent(horizon, intervals, grading_exponent(alpha))
}

impl GradedTimeGrid {
    pub fn with_exponent(horizon: f64, intervals: usize, gamma: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || intervals < 1 || !(gamma >= 1.0) {
            return Err(Error::invalid(format!(
                "bad grid parameters T={horizon}, K={intervals}, gamma={gamma}"
            )));
        }
        let k = intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals)
            .map(|i| horizon * (1.0 - (1.0 - i as f64 / k).powf(gamma)))
            .collect();
        nodes[0] = 0.0;
        nodes[intervals] = horizon;
        let grid = Self { horizon, gamma, nodes };
        grid.check()?;
        Ok(grid)
    }

    pub fn uniform(horizon: f64, intervals: usize) -> Result<Self> {
        Self::with_exponent(horizon, intervals, 1.0)
    }

    /// Grid from explicit nodes; must start at 0 and increase strictly.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        let horizon = *nodes.last().ok_or_else(|| Error::invalid("empty node list"))?;
        let grid = Self { horizon, gamma: f64::NAN, nodes };
        grid.check()?;
        Ok(grid)
    }

    fn check(&self) -> Result<()> {
        if self.nodes.len() < 2 || self.nodes[0] != 0.0 {
            return Err(Error::invalid("grid must start at 0 and have at least 2 nodes"));
        }
        if let Some(w) = self.nodes.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!(
                "grid nodes not strictly increasing near {} (intervals too fine for the grading)",
                w[0]
            )));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Index of the interval `[t_k, t_{k+1})` containing `t`; `T` maps to the last interval.
    pub fn locate(&self, t: f64) -> usize {
        let k = self.nodes.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.intervals() - 1)
    }

    /// Same grid shifted/scaled onto `[0, horizon]`.
    pub fn rescaled(&self, horizon: f64) -> Result<Self> {
        let s = horizon / self.horizon;
        let nodes = self.nodes.iter().map(|t| t * s).collect();
        let mut g = Self::from_nodes(nodes)?;
        g.gamma = self.gamma;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_alpha_is_uniform() {
        let g = graded_grid(2.0, 4, 1e-12).unwrap();
        for (k, t) in g.nodes().iter().enumerate() {
            assert!((t - 0.5 * k as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn quarter_alpha_two_intervals() {
        let g = graded_grid(1.0, 2, 0.25).unwrap();
        assert_eq!(g.gamma(), 2.0);
        assert_eq!(g.nodes(), &[0.0, 0.75, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(graded_grid(0.0, 4, 0.25).is_err());
        assert!(graded_grid(1.0, 1, 0.25).is_err());
        assert!(graded_grid(1.0, 4, 0.5).is_err());
    }

    #[test]
    fn locate_finds_interval() {
        let g = GradedTimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.locate(0.0), 0);
        assert_eq!(g.locate(0.3), 1);
        assert_eq!(g.locate(0.5), 2);
        assert_eq!(g.locate(1.0), 3);
    }

    proptest! {
        #[test]
        fn nodes_strictly_increasing(t in 0.01f64..50.0, k in 2usize..400, a in 0.001f64..0.4) {
            let g = graded_grid(t, k, a).unwrap();
            prop_assert_eq!(g.nodes().len(), k + 1);
            prop_assert_eq!(g.nodes()[0], 0.0);
            prop_assert_eq!(g.nodes()[k], t);
            prop_assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
            let last = g.nodes()[k] - g.nodes()[k - 1];
            let want = t * (1.0 / k as f64).powf(g.gamma());
            prop_assert!((last - want).abs() <= 1e-9 * t);
        }
    }
}
