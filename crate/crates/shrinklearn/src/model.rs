//! JSON model file for a learned nonlinearity.
//!
//! ```json
//! {
//!   "format": "shrinklearn-model",
//!   "version": 1,
//!   "degree": 3,
//!   "grid_halfwidth": K,
//!   "delta": Δ,
//!   "init_threshold": γ̄λ or null,
//!   "init_lambda": λ or null,
//!   "depth": T or null,
//!   "coefficients": [c_{-K}, ..., c_K]
//! }
//! ```
//! Numbers are written in shortest round-trip form and parsed exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use shrinklearn_core::spline::{SplineNonlinearity, DEGREE};

use crate::error::{AppError, Result};

const FORMAT: &str = "shrinklearn-model";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub degree: u32,
    pub grid_halfwidth: usize,
    pub delta: f64,
    pub init_threshold: Option<f64>,
    /// LASSO `λ` the initialization was fitted for.
    pub init_lambda: Option<f64>,
    /// Unrolled depth the nonlinearity was trained at.
    pub depth: Option<usize>,
    pub coefficients: Vec<f64>,
}

impl ModelFile {
    pub fn new(nl: &SplineNonlinearity, init_lambda: Option<f64>, depth: Option<usize>) -> Self {
        ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            degree: nl.degree(),
            grid_halfwidth: nl.grid_halfwidth(),
            delta: nl.delta(),
            init_threshold: nl.init_threshold(),
            init_lambda,
            depth,
            coefficients: nl.coefficients().to_vec(),
        }
    }

    pub fn nonlinearity(&self) -> Result<SplineNonlinearity> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(AppError::Validation(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        if self.degree != DEGREE {
            return Err(AppError::Validation(format!(
                "unsupported spline degree {}",
                self.degree
            )));
        }
        let nl =
            SplineNonlinearity::new(self.grid_halfwidth, self.delta, self.coefficients.clone())?;
        Ok(match self.init_threshold {
            Some(t) => nl.with_init_threshold(t),
            None => nl,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| AppError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| AppError::format(path, e))
    }
}
