//! First-order uncertainty propagation.
//!
//! The model is linearized at the input mean vector; the combined standard
//! uncertainty follows from the sensitivity coefficients and the input
//! covariance:
//!
//! ```text
//! u² = Σᵢ cᵢ² u²ᵢ            (uncorrelated)
//! u² = Σᵢ Σⱼ cᵢ cⱼ Σᵢⱼ       (general, cᵀ Σ c)
//! ```
//!
//! The reported interval is `estimate ± k·u` with k = 1.96, the 95% factor
//! for a Gaussian output. Valid for small input uncertainties only; the
//! Monte-Carlo module reports the discrepancy between the two routes.

use thiserror::Error;

use crate::distributions::{DistributionError, InputSet, PSD_TOL_FACTOR};
use crate::model::{MeasurementModel, ModelError};
use crate::montecarlo::{Method, PropagationResult};

/// Coverage factor for 95% intervals under a Gaussian output distribution.
pub const COVERAGE_K95: f64 = 1.96;

/// Coverage level corresponding to [`COVERAGE_K95`].
pub const ANALYTIC_COVERAGE: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("input set carries correlation; use the correlated propagator")]
    CorrelationPresent,
    #[error("model arity {model} does not match input count {inputs}")]
    ArityMismatch { model: usize, inputs: usize },
    #[error("covariance quadratic form is negative ({value}) beyond rounding tolerance {tolerance}; covariance inconsistent")]
    NegativeRadicand { value: f64, tolerance: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Propagates assuming independent inputs. Rejects input sets with any
/// nonzero off-diagonal covariance rather than silently dropping it.
pub fn propagate_uncorrelated(
    model: &MeasurementModel,
    inputs: &InputSet,
) -> Result<PropagationResult, AnalyticError> {
    if !inputs.is_uncorrelated() {
        return Err(AnalyticError::CorrelationPresent);
    }
    propagate(model, inputs, Method::AnalyticUncorrelated)
}

/// Propagates through the full covariance quadratic form; valid for
/// uncorrelated sets too, where it reduces to the diagonal sum.
pub fn propagate_correlated(
    model: &MeasurementModel,
    inputs: &InputSet,
) -> Result<PropagationResult, AnalyticError> {
    propagate(model, inputs, Method::AnalyticCorrelated)
}

fn propagate(
    model: &MeasurementModel,
    inputs: &InputSet,
    method: Method,
) -> Result<PropagationResult, AnalyticError> {
    if model.arity() != inputs.len() {
        return Err(AnalyticError::ArityMismatch {
            model: model.arity(),
            inputs: inputs.len(),
        });
    }
    inputs.validate()?;
    let x0 = inputs.mean_vector();
    let estimate = model.evaluate(&x0)?;
    let c = model.gradient(&x0)?;
    let cov = inputs.covariance();
    let n = c.len();
    let mut var = 0.0;
    match method {
        Method::AnalyticCorrelated => {
            for i in 0..n {
                for j in 0..n {
                    var += c[i] * c[j] * cov[(i, j)];
                }
            }
        }
        _ => {
            for i in 0..n {
                var += c[i] * c[i] * cov[(i, i)];
            }
        }
    }
    if var < 0.0 {
        // A PSD quadratic form can only go negative by rounding or by the
        // slack the PSD validation tolerance allows; anything larger means
        // the covariance is inconsistent.
        let scale: f64 = (0..n).map(|i| c[i] * c[i] * cov[(i, i)].abs()).sum();
        let tolerance = PSD_TOL_FACTOR * cov.trace().abs().max(1.0) * c.iter().map(|v| v * v).sum::<f64>()
            + f64::EPSILON * scale;
        if var < -tolerance {
            return Err(AnalyticError::NegativeRadicand { value: var, tolerance });
        }
        var = 0.0;
    }
    let u_prop = var.sqrt();
    let half = COVERAGE_K95 * u_prop;
    Ok(PropagationResult {
        method,
        estimate,
        u_prop,
        coverage: ANALYTIC_COVERAGE,
        interval: (estimate - half, estimate + half),
        trials: 0,
        discarded_trials: 0,
        seed: None,
        sensitivities: Some(c),
        sample: None,
    })
}
