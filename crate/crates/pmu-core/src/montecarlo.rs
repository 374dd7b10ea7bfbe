//! Monte-Carlo propagation of distributions.
//!
//! Overview of one run: draw M joint input vectors, push each through the
//! measurement model, and summarize the resulting value distribution by
//! its mean (estimate), sample standard deviation (propagated
//! uncertainty), and a probabilistically symmetric coverage interval read
//! from the empirical quantiles.
//!
//! Trial t always uses random stream `(seed, t)`, so results are
//! bit-identical across thread counts and across runs.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analytic::{propagate_correlated, AnalyticError};
use crate::distributions::{empirical_quantile, DistributionError, InputSet};
use crate::model::{MeasurementModel, ModelError};

/// Trials whose model evaluation hits a domain error are dropped and
/// counted; more than this fraction failing aborts the run, since the
/// model is then being asked about inputs it largely cannot answer.
pub const MAX_DISCARD_FRACTION: f64 = 0.001;

/// An MC-vs-analytic uncertainty disagreement above this marks the
/// nonlinear regime, where the first-order law stops being trustworthy.
pub const NONLINEAR_REL_DIFF: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("trial count must be positive")]
    ZeroTrials,
    #[error("coverage must lie in (0, 1), got {0}")]
    InvalidCoverage(f64),
    #[error("model arity {model} does not match input count {inputs}")]
    ArityMismatch { model: usize, inputs: usize },
    #[error("{discarded} of {trials} trials left the model domain (limit {limit_percent}%)")]
    TooManyDiscarded {
        discarded: usize,
        trials: usize,
        limit_percent: f64,
    },
    #[error("fewer than two trials produced values; cannot form a distribution")]
    TooFewValid,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// How a propagation result was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AnalyticUncorrelated,
    AnalyticCorrelated,
    MonteCarlo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::AnalyticUncorrelated => "analytic-uncorrelated",
            Method::AnalyticCorrelated => "analytic-correlated",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

/// Propagation output, shared by the analytic and sampling routes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationResult {
    pub method: Method,
    /// Model value at the input means (analytic) or mean of the sampled
    /// values (Monte-Carlo).
    pub estimate: f64,
    /// Combined standard uncertainty; sample std with divisor N−1 for
    /// Monte-Carlo.
    pub u_prop: f64,
    /// Probability mass of `interval`.
    pub coverage: f64,
    /// Symmetric `estimate ± k·u_prop` for analytic results; central
    /// empirical quantile interval for Monte-Carlo.
    pub interval: (f64, f64),
    /// Monte-Carlo trial count M; zero for analytic results.
    pub trials: usize,
    /// Trials discarded for leaving the model domain.
    pub discarded_trials: usize,
    /// Seed of the run; absent for analytic results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Sensitivity coefficients at the means; analytic routes only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivities: Option<Vec<f64>>,
    /// Sorted model values when requested; Monte-Carlo only.
    #[serde(skip)]
    pub sample: Option<Vec<f64>>,
}

impl PropagationResult {
    /// Trials that produced a value.
    pub fn valid_trials(&self) -> usize {
        self.trials - self.discarded_trials
    }

    /// Conservative half-width of the coverage interval around the
    /// estimate; equals k·u_prop for analytic results, and the larger of
    /// the two (possibly asymmetric) quantile offsets for Monte-Carlo.
    pub fn expanded_half_width(&self) -> f64 {
        (self.estimate - self.interval.0)
            .max(self.interval.1 - self.estimate)
            .max(0.0)
    }
}

/// Monte-Carlo run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    /// Number of joint draws M.
    pub trials: usize,
    pub seed: u64,
    /// Probability mass of the coverage interval.
    pub coverage: f64,
    /// Keep the sorted model values in the result (for diagnostics or
    /// custom quantiles); off by default to bound memory.
    pub retain_sample: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            seed: 0,
            coverage: 0.95,
            retain_sample: false,
        }
    }
}

/// Propagates the input distributions through the model by sampling.
pub fn propagate_mc(
    model: &MeasurementModel,
    inputs: &InputSet,
    cfg: &McConfig,
) -> Result<PropagationResult, McError> {
    if cfg.trials == 0 {
        return Err(McError::ZeroTrials);
    }
    if !(cfg.coverage > 0.0 && cfg.coverage < 1.0) {
        return Err(McError::InvalidCoverage(cfg.coverage));
    }
    if model.arity() != inputs.len() {
        return Err(McError::ArityMismatch {
            model: model.arity(),
            inputs: inputs.len(),
        });
    }
    let sampler = inputs.sampler()?;
    let dim = inputs.len();

    let outcomes: Vec<Option<f64>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map_init(
            || (vec![0.0; dim], Vec::new()),
            |(row, zbuf), trial| {
                sampler.sample_row(cfg.seed, trial, row, zbuf);
                model.evaluate(row).ok()
            },
        )
        .collect();

    let mut values: Vec<f64> = outcomes.iter().filter_map(|v| *v).collect();
    let discarded = cfg.trials - values.len();
    if (discarded as f64) > MAX_DISCARD_FRACTION * cfg.trials as f64 {
        return Err(McError::TooManyDiscarded {
            discarded,
            trials: cfg.trials,
            limit_percent: MAX_DISCARD_FRACTION * 100.0,
        });
    }
    if values.len() < 2 {
        return Err(McError::TooFewValid);
    }

    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let lo_p = (1.0 - cfg.coverage) / 2.0;
    let hi_p = (1.0 + cfg.coverage) / 2.0;
    let interval = (
        empirical_quantile(&values, lo_p)?,
        empirical_quantile(&values, hi_p)?,
    );
    Ok(PropagationResult {
        method: Method::MonteCarlo,
        estimate: mean,
        u_prop: var.sqrt(),
        coverage: cfg.coverage,
        interval,
        trials: cfg.trials,
        discarded_trials: discarded,
        seed: Some(cfg.seed),
        sensitivities: None,
        sample: cfg.retain_sample.then_some(values),
    })
}

/// Side-by-side comparison of the sampling route and the first-order
/// route, surfacing where linearization stops being adequate.
#[derive(Debug, Clone, PartialEq)]
pub struct McAnalyticReport {
    pub montecarlo: PropagationResult,
    pub analytic: PropagationResult,
    /// `|u_mc - u_analytic| / u_analytic`; `None` (undefined) when the
    /// analytic uncertainty is zero.
    pub u_prop_rel_diff: Option<f64>,
    /// Set when the two routes disagree beyond [`NONLINEAR_REL_DIFF`].
    pub nonlinear_regime: bool,
}

pub fn mc_vs_analytic_report(
    model: &MeasurementModel,
    inputs: &InputSet,
    cfg: &McConfig,
) -> Result<McAnalyticReport, McError> {
    let analytic = propagate_correlated(model, inputs).map_err(|e| match e {
        AnalyticError::Model(m) => McError::Model(m),
        AnalyticError::Distribution(d) => McError::Distribution(d),
        AnalyticError::ArityMismatch { model, inputs } => {
            McError::ArityMismatch { model, inputs }
        }
        // propagate_correlated raises neither of these
        AnalyticError::CorrelationPresent | AnalyticError::NegativeRadicand { .. } => {
            unreachable!()
        }
    })?;
    let montecarlo = propagate_mc(model, inputs, cfg)?;
    let u_prop_rel_diff = if analytic.u_prop == 0.0 {
        None
    } else {
        Some((montecarlo.u_prop - analytic.u_prop).abs() / analytic.u_prop)
    };
    let nonlinear_regime = match u_prop_rel_diff {
        Some(d) => d > NONLINEAR_REL_DIFF,
        None => montecarlo.u_prop > 0.0,
    };
    Ok(McAnalyticReport {
        montecarlo,
        analytic,
        u_prop_rel_diff,
        nonlinear_regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Distribution;
    use approx::assert_relative_eq;

    fn gauss(mean: f64, std: f64) -> Distribution {
        Distribution::gaussian(mean, std).unwrap()
    }

    fn cfg(trials: usize, seed: u64) -> McConfig {
        McConfig {
            trials,
            seed,
            ..McConfig::default()
        }
    }

    #[test]
    fn linear_gaussian_agrees_with_closed_form() {
        // f = 2x - y with sigma (3,4): exact output N(16, 52).
        let model = MeasurementModel::linear_combination(vec![2.0, -1.0]).unwrap();
        let inputs = InputSet::independent(vec![
            ("x".into(), gauss(10.0, 3.0)),
            ("y".into(), gauss(4.0, 4.0)),
        ])
        .unwrap();
        let r = propagate_mc(&model, &inputs, &cfg(100_000, 21)).unwrap();
        let u_true = 52.0_f64.sqrt();
        assert!((r.estimate - 16.0).abs() < 0.1, "estimate {}", r.estimate);
        assert_relative_eq!(r.u_prop, u_true, max_relative = 0.01);
        // Empirical tail quantiles carry noise proportional to sigma, not
        // to the endpoint magnitude.
        assert!((r.interval.0 - (16.0 - 1.96 * u_true)).abs() < 0.05 * u_true, "lo {}", r.interval.0);
        assert!((r.interval.1 - (16.0 + 1.96 * u_true)).abs() < 0.05 * u_true, "hi {}", r.interval.1);
        assert_eq!(r.method, Method::MonteCarlo);
        assert_eq!(r.valid_trials(), 100_000);
        assert_eq!(r.seed, Some(21));
    }

    #[test]
    fn standard_normal_interval_hits_k95() {
        let model = MeasurementModel::linear_combination(vec![1.0]).unwrap();
        let inputs = InputSet::independent(vec![("x".into(), gauss(0.0, 1.0))]).unwrap();
        let r = propagate_mc(&model, &inputs, &cfg(100_000, 5)).unwrap();
        assert!((r.interval.0 + 1.96).abs() < 0.03, "lo {}", r.interval.0);
        assert!((r.interval.1 - 1.96).abs() < 0.03, "hi {}", r.interval.1);
        assert!(r.expanded_half_width() < 2.05);
        assert!(r.expanded_half_width() > 1.9);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let model = MeasurementModel::distance3d();
        let point = [0.1, 0.2, 0.3, 1.0, 2.0, 2.5];
        let inputs = InputSet::independent(
            model
                .input_names()
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), gauss(point[i], 0.05)))
                .collect(),
        )
        .unwrap();
        let a = propagate_mc(&model, &inputs, &cfg(20_000, 77)).unwrap();
        let b = propagate_mc(&model, &inputs, &cfg(20_000, 77)).unwrap();
        assert_eq!(a, b);
        let c = propagate_mc(&model, &inputs, &cfg(20_000, 78)).unwrap();
        assert_ne!(a.estimate.to_bits(), c.estimate.to_bits());
    }

    #[test]
    fn rare_domain_failures_are_discarded_and_counted() {
        // sqrt over N(0.35, 0.1): P(x < 0) ~ 2.3e-4, safely under the
        // 0.1% abort threshold but nonzero at 50k trials.
        let model = MeasurementModel::parse("(sqrt x)", &["x"]).unwrap();
        let inputs = InputSet::independent(vec![("x".into(), gauss(0.35, 0.1))]).unwrap();
        let r = propagate_mc(&model, &inputs, &cfg(50_000, 13)).unwrap();
        assert!(r.discarded_trials > 0, "expected some discards");
        assert!(r.discarded_trials <= 50, "discarded {}", r.discarded_trials);
        assert_eq!(r.valid_trials() + r.discarded_trials, 50_000);
    }

    #[test]
    fn frequent_domain_failures_abort() {
        // sqrt over N(1, 0.5): about 2.3% of draws are negative, well
        // over the 0.1% limit.
        let model = MeasurementModel::parse("(sqrt x)", &["x"]).unwrap();
        let inputs = InputSet::independent(vec![("x".into(), gauss(1.0, 0.5))]).unwrap();
        assert!(matches!(
            propagate_mc(&model, &inputs, &cfg(10_000, 1)).unwrap_err(),
            McError::TooManyDiscarded { .. }
        ));
    }

    #[test]
    fn zero_variance_collapses_to_point() {
        let model = MeasurementModel::distance3d();
        let inputs = InputSet::independent(
            [0.0, 0.0, 0.0, 3.0, 4.0, 0.0]
                .iter()
                .enumerate()
                .map(|(i, &m)| (format!("c{i}"), gauss(m, 0.0)))
                .collect(),
        )
        .unwrap();
        let r = propagate_mc(&model, &inputs, &cfg(1000, 3)).unwrap();
        assert_eq!(r.estimate, 5.0);
        assert_eq!(r.u_prop, 0.0);
        assert_eq!(r.interval, (5.0, 5.0));
    }

    #[test]
    fn retained_sample_is_sorted() {
        let model = MeasurementModel::linear_combination(vec![1.0]).unwrap();
        let inputs = InputSet::independent(vec![("x".into(), gauss(0.0, 1.0))]).unwrap();
        let mut c = cfg(1000, 2);
        c.retain_sample = true;
        let r = propagate_mc(&model, &inputs, &c).unwrap();
        let s = r.sample.unwrap();
        assert_eq!(s.len(), 1000);
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn report_flags_linear_model_as_linear() {
        let model = MeasurementModel::linear_combination(vec![1.0, 1.0]).unwrap();
        let inputs = InputSet::independent(vec![
            ("x".into(), gauss(1.0, 0.1)),
            ("y".into(), gauss(2.0, 0.2)),
        ])
        .unwrap();
        let rep = mc_vs_analytic_report(&model, &inputs, &cfg(50_000, 9)).unwrap();
        let d = rep.u_prop_rel_diff.unwrap();
        assert!(d < 0.02, "rel diff {d}");
        assert!(!rep.nonlinear_regime);
        assert_relative_eq!(
            rep.analytic.u_prop,
            (0.01_f64 + 0.04).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn report_flags_large_noise_as_nonlinear() {
        // Distance with noise comparable to the separation: strongly
        // nonlinear, the routes must disagree materially.
        let model = MeasurementModel::distance3d();
        let point = [0.1, 0.0, 0.0, 0.0, 0.0, 0.0];
        let inputs = InputSet::independent(
            model
                .input_names()
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let s = if i < 3 { 0.1 } else { 0.0 };
                    (n.clone(), gauss(point[i], s))
                })
                .collect(),
        )
        .unwrap();
        let rep = mc_vs_analytic_report(&model, &inputs, &cfg(100_000, 31)).unwrap();
        assert!(
            rep.u_prop_rel_diff.unwrap() > 0.05,
            "rel diff {:?}",
            rep.u_prop_rel_diff
        );
        assert!(rep.nonlinear_regime);
    }

    #[test]
    fn zero_analytic_uncertainty_flags_undefined() {
        let model = MeasurementModel::linear_combination(vec![1.0]).unwrap();
        let inputs = InputSet::independent(vec![("x".into(), gauss(2.0, 0.0))]).unwrap();
        let rep = mc_vs_analytic_report(&model, &inputs, &cfg(100, 4)).unwrap();
        assert_eq!(rep.u_prop_rel_diff, None);
        assert!(!rep.nonlinear_regime);
    }

    #[test]
    fn config_validation() {
        let model = MeasurementModel::linear_combination(vec![1.0]).unwrap();
        let inputs = InputSet::independent(vec![("x".into(), gauss(0.0, 1.0))]).unwrap();
        assert!(matches!(
            propagate_mc(&model, &inputs, &cfg(0, 1)).unwrap_err(),
            McError::ZeroTrials
        ));
        let mut bad = cfg(10, 1);
        bad.coverage = 1.0;
        assert!(matches!(
            propagate_mc(&model, &inputs, &bad).unwrap_err(),
            McError::InvalidCoverage(_)
        ));
    }
}
