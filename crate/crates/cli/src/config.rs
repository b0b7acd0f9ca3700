//! JSON run configuration; command-line flags override its fields.

use std::path::{Path, PathBuf};

use drbeta::model::FitOptions;
use drbeta::rib::EstimatorOptions;
use drbeta::sim::SimConfig;
use drbeta::tuning::TuningOverrides;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replications: Option<usize>,
    pub threads: Option<usize>,
    pub sim: Option<SimConfig>,
    pub tuning: Option<TuningOverrides>,
    pub estimator: Option<EstimatorOptions>,
    pub fit: Option<FitSection>,
    pub forecast: Option<ForecastSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub p: usize,
    pub q: usize,
    pub bic: bool,
    pub max_p: usize,
    pub max_q: usize,
    pub options: FitOptions,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            p: 1,
            q: 1,
            bic: false,
            max_p: 3,
            max_q: 3,
            options: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub window: usize,
    pub p: usize,
    pub q: usize,
    /// Also produce ARMA(1,1) forecasts from the same series.
    pub arma_baseline: bool,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            window: 500,
            p: 1,
            q: 1,
            arma_baseline: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}
