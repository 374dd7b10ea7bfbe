//! Measurement-uncertainty propagation for perception pipelines, with
//! safety-limit checking against dependable-failure budgets.
//!
//! The crate is organized bottom-up:
//!
//! * [`distributions`]: input laws, covariance validation, joint sampling
//! * [`model`]: measurement models (built-ins plus a parsed expression form)
//! * [`analytic`]: first-order (linearized) uncertainty propagation
//! * [`montecarlo`]: sampling-based propagation of full distributions
//! * [`typeb`]: uncertainty estimates from conserved-quantity series
//! * [`safety`]: limit checks, violation counting, failure-rate budgets
//! * [`pipeline`]: frame streams, noise models, end-to-end evaluation

pub mod analytic;
pub mod distributions;
pub mod model;
pub mod montecarlo;
pub mod pipeline;
pub mod rng;
pub mod safety;
pub mod typeb;

pub use analytic::{propagate_correlated, propagate_uncorrelated, AnalyticError};
pub use distributions::{
    empirical_quantile, normal_quantile, Distribution, DistributionError, InputSet, InputSetDoc,
    Samples,
};
pub use model::{MeasurementModel, ModelError, ParseError};
pub use montecarlo::{
    mc_vs_analytic_report, propagate_mc, McAnalyticReport, McConfig, McError, Method,
    PropagationResult,
};
pub use safety::{
    assess, check_limit, compute_pfdh, ComplianceVerdict, LimitDirection, SafetyError,
    SafetyLimit, SafetyReport, UncertaintyMode, Verdict,
};
pub use typeb::{conserved_series, estimate_typeb, ConservationSpec, TypeBError, TypeBEstimate};
