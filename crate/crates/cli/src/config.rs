use std::path::Path;

use ensemble_core::model::Family;
use ensemble_core::{DVector, C64};
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const SCHEMA: u32 = 1;

fn default_n_time() -> usize {
    201
}
fn default_n_param() -> usize {
    101
}
fn default_rel_eps() -> f64 {
    1e-3
}
fn default_step_tol() -> f64 {
    1e-10
}
fn default_rank_tol() -> f64 {
    1e-12
}

/// A JSON run description for `synth`, `simulate` and `diagnose`.
///
/// ```json
/// { "schema": 1,
///   "system": { "family": "example1", "t_final": 2.0 },
///   "n_time": 201, "n_param": 101,
///   "x0": [[0, 0], [0, 0]], "xf": [[1, 0], [0, 0]],
///   "rel_eps": 1e-3 }
/// ```
///
/// `x0`/`xf` are constant over the parameter, one `[re, im]` pair per state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub schema: u32,
    pub system: Family,
    #[serde(default = "default_n_time")]
    pub n_time: usize,
    #[serde(default = "default_n_param")]
    pub n_param: usize,
    pub x0: Vec<[f64; 2]>,
    pub xf: Vec<[f64; 2]>,
    /// Residual target as a fraction of `‖ξ‖`.
    #[serde(default = "default_rel_eps")]
    pub rel_eps: f64,
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read spec {}: {e}", path.display())))?;
        let spec: RunSpec =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("invalid spec {}: {e}", path.display())))?;
        if spec.schema != SCHEMA {
            return Err(Failure::config(format!("unsupported spec schema {} (expected {SCHEMA})", spec.schema)));
        }
        if !(spec.rel_eps >= 0.0) || !(spec.step_tol > 0.0) || !(spec.rank_tol > 0.0) {
            return Err(Failure::config("rel_eps must be >= 0, step_tol and rank_tol > 0"));
        }
        Ok(spec)
    }

    pub fn state(v: &[[f64; 2]]) -> DVector<C64> {
        DVector::from_iterator(v.len(), v.iter().map(|p| C64::new(p[0], p[1])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let s: RunSpec = serde_json::from_str(
            r#"{"schema":1,"system":{"family":"example1","t_final":2.0},"x0":[[0,0],[0,0]],"xf":[[1,0],[0,0]]}"#,
        )
        .unwrap();
        assert_eq!(s.n_time, 201);
        assert_eq!(s.system, Family::Example1 { t_final: 2.0, s1: 1.0, s2: 2.0 });
        assert!(serde_json::from_str::<RunSpec>(r#"{"schema":1,"bogus":1}"#).is_err());
    }
}
