//! Time-indexed families of symmetric operators.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GradedTimeGrid;
use crate::linalg::{Mat, SymOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// `P(t) = P(t_k)` on `[t_k, t_{k+1})`.
    Constant,
    /// Linear between nodes.
    Linear,
    /// Polynomial through the interval endpoints and the stored interior stage values.
    Collocation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorPath {
    grid: GradedTimeGrid,
    values: Vec<SymOperator>,
    /// Interior stage abscissae on `[0, 1]`, shared by every interval.
    stage_nodes: Vec<f64>,
    /// `stages[k][i]`: value at `t_k + c_i h_k`.
    stages: Vec<Vec<SymOperator>>,
    interpolation: Interpolation,
}

impl OperatorPath {
    pub fn new(grid: GradedTimeGrid, values: Vec<SymOperator>, interpolation: Interpolation) -> Result<Self> {
        if values.len() != grid.nodes().len() {
            return Err(Error::invalid(format!(
                "{} values for {} grid nodes",
                values.len(),
                grid.nodes().len()
            )));
        }
        let dim = values[0].dim();
        if values.iter().any(|v| v.dim() != dim) {
            return Err(Error::invalid("path values have inconsistent dimensions"));
        }
        let interpolation = match interpolation {
            Interpolation::Collocation => Interpolation::Linear,
            other => other,
        };
        Ok(Self { grid, values, stage_nodes: Vec::new(), stages: Vec::new(), interpolation })
    }

    pub(crate) fn with_stages(
        grid: GradedTimeGrid,
        values: Vec<SymOperator>,
        stage_nodes: Vec<f64>,
        stages: Vec<Vec<SymOperator>>,
    ) -> Self {
        debug_assert_eq!(stages.len(), grid.intervals());
        Self { grid, values, stage_nodes, stages, interpolation: Interpolation::Collocation }
    }

    /// Zero path on `grid`; stage values included when `stage_nodes` is non-empty.
    pub fn zeros(grid: &GradedTimeGrid, dim: usize, stage_nodes: &[f64]) -> Self {
        let values = vec![SymOperator::zeros(dim); grid.nodes().len()];
        if stage_nodes.is_empty() {
            return Self::new(grid.clone(), values, Interpolation::Constant).unwrap();
        }
        let stages = vec![vec![SymOperator::zeros(dim); stage_nodes.len()]; grid.intervals()];
        Self::with_stages(grid.clone(), values, stage_nodes.to_vec(), stages)
    }

    pub fn grid(&self) -> &GradedTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[SymOperator] {
        &self.values
    }

    pub fn value(&self, k: usize) -> &SymOperator {
        &self.values[k]
    }

    pub fn initial(&self) -> &SymOperator {
        &self.values[0]
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn stage_nodes(&self) -> &[f64] {
        &self.stage_nodes
    }

    /// Stored stage value, when the path came from the collocation solver.
    pub fn stage(&self, interval: usize, stage: usize) -> Option<&SymOperator> {
        self.stages.get(interval).and_then(|s| s.get(stage))
    }

    pub fn set_interpolation(&mut self, rule: Interpolation) {
        if rule == Interpolation::Collocation && self.stages.is_empty() {
            return;
        }
        self.interpolation = rule;
    }

    /// Value at an arbitrary time in `[0, T]`.
    pub fn at(&self, t: f64) -> SymOperator {
        let nodes = self.grid.nodes();
        if t <= 0.0 {
            return self.values[0].clone();
        }
        if t >= self.grid.horizon() {
            return self.values[nodes.len() - 1].clone();
        }
        let k = self.grid.locate(t);
        let h = self.grid.step(k);
        let x = (t - nodes[k]) / h;
        match self.interpolation {
            Interpolation::Constant => self.values[k].clone(),
            Interpolation::Linear => {
                SymOperator::symmetrized(self.values[k].matrix() * (1.0 - x) + self.values[k + 1].matrix() * x)
            }
            Interpolation::Collocation => {
                let mut abscissae = Vec::with_capacity(self.stage_nodes.len() + 2);
                let mut vals: Vec<&Mat> = Vec::with_capacity(self.stage_nodes.len() + 2);
                abscissae.push(0.0);
                vals.push(self.values[k].matrix());
                for (c, v) in self.stage_nodes.iter().zip(&self.stages[k]) {
                    // a stage on an endpoint duplicates the node value
                    if *c <= 1e-14 || *c >= 1.0 - 1e-14 {
                        continue;
                    }
                    abscissae.push(*c);
                    vals.push(v.matrix());
                }
                abscissae.push(1.0);
                vals.push(self.values[k + 1].matrix());
                let dim = self.dim();
                let mut acc = Mat::zeros(dim, dim);
                for (j, v) in vals.iter().enumerate() {
                    let mut l = 1.0;
                    for (m, c) in abscissae.iter().enumerate() {
                        if m != j {
                            l *= (x - c) / (abscissae[j] - c);
                        }
                    }
                    acc += *v * l;
                }
                SymOperator::symmetrized(acc)
            }
        }
    }

    /// `sup_k ‖self_k − other_k‖_max` over grid nodes (and stages when both carry them).
    pub fn max_distance(&self, other: &OperatorPath) -> f64 {
        let mut d = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.sub(b).max_norm())
            .fold(0.0, f64::max);
        for (sa, sb) in self.stages.iter().zip(&other.stages) {
            for (a, b) in sa.iter().zip(sb) {
                d = d.max(a.sub(b).max_norm());
            }
        }
        d
    }

    pub fn sup_max_norm(&self) -> f64 {
        self.values.iter().map(SymOperator::max_norm).fold(0.0, f64::max)
    }

    /// One row per node: `t`, then the row-major upper triangle.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        for i in 0..n {
            for j in i..n {
                header.push(format!("p_{i}_{j}"));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for (t, v) in self.grid.nodes().iter().zip(&self.values) {
            let mut row = vec![fmt_f64(*t)];
            row.extend(v.upper_triangle().into_iter().map(fmt_f64));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
