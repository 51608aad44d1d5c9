use serde::{Deserialize, Serialize};

use crate::error::{EnsembleError, Result};
use crate::quadrature::{linspace, trapezoid_weights};

/// Discretization of the time × parameter rectangle with quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub time_nodes: Vec<f64>,
    pub param_nodes: Vec<f64>,
    pub time_weights: Vec<f64>,
    pub param_weights: Vec<f64>,
}

impl Grid {
    /// Uniform nodes on `[0, t_final]` and `[s1, s2]` with trapezoid weights.
    pub fn uniform(t_final: f64, n_time: usize, s_span: (f64, f64), n_param: usize) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(EnsembleError::param(format!("horizon must be positive, got {t_final}")));
        }
        if !(s_span.0 < s_span.1) {
            return Err(EnsembleError::param(format!(
                "parameter span must satisfy s1 < s2, got [{}, {}]",
                s_span.0, s_span.1
            )));
        }
        if n_time < 2 || n_param < 2 {
            return Err(EnsembleError::param("grids need at least two nodes per axis"));
        }
        Self::trapezoid(linspace(0.0, t_final, n_time), linspace(s_span.0, s_span.1, n_param))
    }

    /// Arbitrary increasing nodes, trapezoid weights.
    pub fn trapezoid(time_nodes: Vec<f64>, param_nodes: Vec<f64>) -> Result<Self> {
        let time_weights = trapezoid_weights(&time_nodes);
        let param_weights = trapezoid_weights(&param_nodes);
        Self::new(time_nodes, time_weights, param_nodes, param_weights)
    }

    pub fn new(
        time_nodes: Vec<f64>,
        time_weights: Vec<f64>,
        param_nodes: Vec<f64>,
        param_weights: Vec<f64>,
    ) -> Result<Self> {
        let g = Grid { time_nodes, param_nodes, time_weights, param_weights };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        check_axis("time", &self.time_nodes, &self.time_weights)?;
        check_axis("parameter", &self.param_nodes, &self.param_weights)?;
        if self.time_nodes[0] != 0.0 {
            return Err(EnsembleError::param("time grid must start at t = 0"));
        }
        Ok(())
    }

    pub fn t_final(&self) -> f64 {
        *self.time_nodes.last().unwrap()
    }

    pub fn s_span(&self) -> (f64, f64) {
        (self.param_nodes[0], *self.param_nodes.last().unwrap())
    }

    pub fn n_time(&self) -> usize {
        self.time_nodes.len()
    }

    pub fn n_param(&self) -> usize {
        self.param_nodes.len()
    }
}

fn check_axis(name: &str, nodes: &[f64], weights: &[f64]) -> Result<()> {
    if nodes.len() < 2 {
        return Err(EnsembleError::param(format!("{name} grid needs at least two nodes")));
    }
    if nodes.len() != weights.len() {
        return Err(EnsembleError::shape(format!(
            "{name} grid has {} nodes but {} weights",
            nodes.len(),
            weights.len()
        )));
    }
    if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EnsembleError::param(format!("{name} nodes must be finite and strictly increasing")));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(EnsembleError::param(format!("{name} weights must be positive")));
    }
    let len = nodes[nodes.len() - 1] - nodes[0];
    let total: f64 = weights.iter().sum();
    if (total - len).abs() > 1e-12 * len {
        return Err(EnsembleError::param(format!(
            "{name} weights sum to {total}, expected the interval length {len}"
        )));
    }
    Ok(())
}
