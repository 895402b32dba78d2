//! Calibration of the Cheyette-SV caplet model against target prices by
//! global optimization over trained surrogates.

pub mod icde;
mod pipeline;
pub mod problem;
mod report;

use serde::{Deserialize, Serialize};

pub use icde::{icde_minimize, Constraint, IbgaConfig, IcdeConfig, IcdeError, IcdeResult, Strategy, ALL_STRATEGIES};
pub use pipeline::{
    calibrate_bootstrap, calibrate_single_maturity, robust_calibrate, select_robust, stream_seed, synthetic_targets, CalibConfig,
    CalibResult, Fit, IntervalResult, Robust, SeedFit, SeedRun, SeedStreams,
};
pub use problem::{CapletProblem, Input, Piece};
pub use report::{write_metrics_csv, write_params_csv, write_prices_csv};

use crate::cheyette::CheyetteError;
use crate::sampling::SamplingError;
use crate::sim::SimError;
use crate::surrogate::{EnsembleError, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum CalibError {
    #[error("calibration config: {0}")]
    Config(String),
    #[error("targets: {0}")]
    Targets(String),
    #[error(transparent)]
    Model(#[from] CheyetteError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("training: {0}")]
    Training(#[from] TrainError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Optimizer(#[from] IcdeError),
    #[error("every seed failed at reset {t1}: {messages:?}")]
    AllSeedsFailed { t1: f64, messages: Vec<String> },
}

/// Target caplet prices for one reset date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibTargets {
    /// Reset date; the caplet pays at `t1 + tenor`.
    pub t1: f64,
    pub strikes: Vec<f64>,
    pub prices: Vec<f64>,
    /// Standard errors when the targets come from a simulation.
    #[serde(default)]
    pub std_errors: Option<Vec<f64>>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl CalibTargets {
    pub fn new(t1: f64, strikes: Vec<f64>, prices: Vec<f64>) -> CalibTargets {
        CalibTargets {
            t1,
            strikes,
            prices,
            std_errors: None,
            weights: None,
        }
    }

    pub fn len(&self) -> usize {
        self.strikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strikes.is_empty()
    }

    /// Fewer instruments than calibrated parameters.
    pub fn underdetermined(&self) -> bool {
        self.len() < 3
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[k])
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        let bad = |m: String| Err(CalibError::Targets(m));
        if self.is_empty() {
            return bad("need at least one target".into());
        }
        if !(self.t1 > 0.0 && self.t1.is_finite()) {
            return bad(format!("reset date {} must be positive", self.t1));
        }
        if self.prices.len() != self.len() {
            return bad(format!("{} prices for {} strikes", self.prices.len(), self.len()));
        }
        if self.strikes.iter().chain(&self.prices).any(|v| !v.is_finite()) {
            return bad("strikes and prices must be finite".into());
        }
        for (name, v) in [("std_errors", &self.std_errors), ("weights", &self.weights)] {
            if let Some(v) = v {
                if v.len() != self.len() || v.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return bad(format!("{name} needs {} finite non-negative entries", self.len()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pdml_fit_error: f64,
    pub model_error: f64,
    pub max_error: f64,
}

/// Surrogate-vs-MC and MC-vs-target sums of squares over the instruments.
pub fn metrics(surrogate: &[f64], mc: &[f64], targets: &[f64]) -> Result<Metrics, CalibError> {
    if surrogate.len() != mc.len() || mc.len() != targets.len() {
        return Err(CalibError::Targets(format!(
            "mismatched instrument grids: {} surrogate, {} MC, {} target prices",
            surrogate.len(),
            mc.len(),
            targets.len()
        )));
    }
    let ss = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let pdml_fit_error = ss(surrogate, mc);
    let model_error = ss(mc, targets);
    Ok(Metrics {
        pdml_fit_error,
        model_error,
        max_error: pdml_fit_error.max(model_error),
    })
}
