//! Safety-limit checking and dangerous-failure-rate aggregation.
//!
//! A limit check reads the attribute together with its uncertainty in the
//! worst-case direction: a lower-bound limit (minimum separation) is
//! violated when `a - u < lambda`, an upper-bound limit (maximum approach
//! speed) when `a + u > lambda`. Overestimating a distance must never hide
//! a dangerous situation, hence the one-sided, conservative reading.
//! Boundary contact (`a ∓ u == lambda`) counts as safe.
//!
//! Violations aggregate into a per-hour rate:
//!
//! ```text
//! PFDH = N_d * f_p * 3600,   N_d = violations / frames
//! ```
//!
//! compared against a dangerous-failure budget (default 1e-6 per hour,
//! the usual bar for safety functions in this domain).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montecarlo::PropagationResult;

/// Default dangerous-failure budget, events per hour.
pub const DEFAULT_PFDH_THRESHOLD: f64 = 1e-6;

const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("uncertainty must be finite and >= 0, got {0}")]
    NegativeUncertainty(f64),
    #[error("{what} must be finite")]
    NonFinite { what: &'static str },
    #[error("frame count must be positive")]
    ZeroFrames,
    #[error("{violations} violations exceed {frames} frames")]
    ViolationsExceedFrames { violations: usize, frames: usize },
    #[error("frame rate must be finite and > 0, got {0}")]
    NonPositiveFrameRate(f64),
    #[error("threshold must be finite and > 0, got {0}")]
    NonPositiveThreshold(f64),
}

/// Which side of the limit is safe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitDirection {
    /// Attribute must stay >= lambda (e.g. separation distance).
    Lower,
    /// Attribute must stay <= lambda (e.g. approach speed).
    Upper,
}

/// Which uncertainty enters the worst-case bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UncertaintyMode {
    /// Standard uncertainty u_prop.
    #[serde(rename = "standard")]
    Standard,
    /// Half-width of the 95% coverage interval (the default: limits are
    /// stated at a 95% confidence level).
    #[default]
    #[serde(rename = "expanded-95")]
    Expanded95,
}

impl UncertaintyMode {
    /// Extracts the uncertainty this mode applies from a propagation
    /// result.
    pub fn select(self, result: &PropagationResult) -> f64 {
        match self {
            UncertaintyMode::Standard => result.u_prop,
            UncertaintyMode::Expanded95 => result.expanded_half_width(),
        }
    }
}

/// A quantitative safety limit on one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyLimit {
    pub attribute: String,
    pub lambda: f64,
    pub direction: LimitDirection,
    #[serde(default)]
    pub mode: UncertaintyMode,
}

impl SafetyLimit {
    pub fn lower(attribute: impl Into<String>, lambda: f64) -> Self {
        Self {
            attribute: attribute.into(),
            lambda,
            direction: LimitDirection::Lower,
            mode: UncertaintyMode::default(),
        }
    }

    pub fn upper(attribute: impl Into<String>, lambda: f64) -> Self {
        Self {
            attribute: attribute.into(),
            lambda,
            direction: LimitDirection::Upper,
            mode: UncertaintyMode::default(),
        }
    }
}

/// Outcome of one limit check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub safe: bool,
    /// Signed slack to the violation boundary in attribute units;
    /// positive means safe.
    pub margin: f64,
}

/// Worst-case limit check for one attribute value `a` with uncertainty
/// `u_a` (already selected per the limit's mode).
pub fn check_limit(a: f64, u_a: f64, limit: &SafetyLimit) -> Result<Verdict, SafetyError> {
    if !u_a.is_finite() || u_a < 0.0 {
        return Err(SafetyError::NegativeUncertainty(u_a));
    }
    if !a.is_finite() {
        return Err(SafetyError::NonFinite { what: "attribute value" });
    }
    if !limit.lambda.is_finite() {
        return Err(SafetyError::NonFinite { what: "lambda" });
    }
    let margin = match limit.direction {
        LimitDirection::Lower => (a - u_a) - limit.lambda,
        LimitDirection::Upper => limit.lambda - (a + u_a),
    };
    Ok(Verdict {
        safe: margin >= 0.0,
        margin,
    })
}

/// Violations-per-hour rate from a violation count over a frame stream.
pub fn compute_pfdh(violations: usize, frames: usize, f_p: f64) -> Result<f64, SafetyError> {
    if frames == 0 {
        return Err(SafetyError::ZeroFrames);
    }
    if violations > frames {
        return Err(SafetyError::ViolationsExceedFrames { violations, frames });
    }
    if !f_p.is_finite() || f_p <= 0.0 {
        return Err(SafetyError::NonPositiveFrameRate(f_p));
    }
    let n_d = violations as f64 / frames as f64;
    Ok(n_d * f_p * SECONDS_PER_HOUR)
}

/// Compliance outcome of a PFDH figure against a failure budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplianceVerdict {
    pub pfdh: f64,
    pub threshold: f64,
    /// PFDH <= threshold (boundary inclusive).
    pub compliant: bool,
    /// log10(PFDH / threshold); positive when over budget, absent for
    /// PFDH = 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orders_of_magnitude_gap: Option<f64>,
}

/// Combined per-frame outcome (worst case over the limits checked in
/// that frame).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameVerdict {
    pub frame: usize,
    pub t: f64,
    pub safe: bool,
    /// Smallest margin across the frame's limit checks; infinite when no
    /// limit applied.
    pub margin: f64,
}

/// Stream-level aggregation of per-frame verdicts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyReport {
    pub frames: usize,
    pub violations: usize,
    /// Violation fraction, violations per frame.
    pub n_d: f64,
    /// Frame rate in frames per second.
    pub f_p: f64,
    pub pfdh: f64,
    pub threshold: f64,
    pub compliant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orders_of_magnitude_gap: Option<f64>,
    pub verdicts: Vec<FrameVerdict>,
}

impl SafetyReport {
    pub fn from_verdicts(
        verdicts: Vec<FrameVerdict>,
        f_p: f64,
        threshold: f64,
    ) -> Result<Self, SafetyError> {
        let frames = verdicts.len();
        let violations = verdicts.iter().filter(|v| !v.safe).count();
        let pfdh = compute_pfdh(violations, frames, f_p)?;
        let verdict = assess_pfdh(pfdh, threshold)?;
        Ok(Self {
            frames,
            violations,
            n_d: violations as f64 / frames as f64,
            f_p,
            pfdh,
            threshold,
            compliant: verdict.compliant,
            orders_of_magnitude_gap: verdict.orders_of_magnitude_gap,
            verdicts,
        })
    }
}

/// Re-judges an existing report against a different failure budget.
pub fn assess(report: &SafetyReport, threshold: f64) -> Result<ComplianceVerdict, SafetyError> {
    assess_pfdh(report.pfdh, threshold)
}

fn assess_pfdh(pfdh: f64, threshold: f64) -> Result<ComplianceVerdict, SafetyError> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(SafetyError::NonPositiveThreshold(threshold));
    }
    Ok(ComplianceVerdict {
        pfdh,
        threshold,
        compliant: pfdh <= threshold,
        orders_of_magnitude_gap: (pfdh > 0.0).then(|| (pfdh / threshold).log10()),
    })
}
