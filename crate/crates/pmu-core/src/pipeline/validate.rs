//! Ground-truth containment checking for synthetic runs.
//!
//! With known true positions, two questions close the loop on the
//! uncertainty machinery: does the true position fall inside the claimed
//! expanded uncertainty often enough (containment rate vs the stated
//! coverage), and does the claimed uncertainty magnitude match the
//! actually injected noise (mean PMU vs ground-truth scatter)?

use serde::Serialize;
use thiserror::Error;

use super::config::ContainmentMode;
use super::frame::Frame;
use super::EvaluationTrace;
use crate::distributions::{normal_quantile, DistributionError};

/// Containment below `coverage - this margin` flags the run as
/// under-covered. Allows for binomial wobble at realistic frame counts.
pub const UNDER_COVERAGE_MARGIN: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("stream lengths differ: true {truth}, measured {measured}, trace {trace}")]
    LengthMismatch {
        truth: usize,
        measured: usize,
        trace: usize,
    },
    #[error("frame {frame}: timestamps disagree between streams")]
    TimestampMismatch { frame: usize },
    #[error("frame {frame} has no entity {entity:?}")]
    MissingEntity { frame: usize, entity: String },
    #[error("need at least 2 frames, got {got}")]
    TooFewFrames { got: usize },
    #[error(transparent)]
    Coverage(#[from] DistributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationRecord {
    pub frames: usize,
    /// Coverage level the containment is judged at.
    pub coverage: f64,
    pub mode: ContainmentMode,
    /// Frames whose true position lay inside the expanded uncertainty.
    pub contained: usize,
    pub containment_rate: f64,
    /// Mean claimed position uncertainty (root-sum-square of the
    /// per-coordinate sigmas, averaged over frames).
    pub mean_pmu: f64,
    /// Scatter actually present: sample std of the position error
    /// vectors about their mean, all components pooled.
    pub ground_truth_std: f64,
    /// |mean_pmu - ground_truth_std| / ground_truth_std; absent when no
    /// noise was injected but uncertainty was claimed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrepancy: Option<f64>,
    /// Containment fell more than the allowed margin below `coverage`.
    pub under_covered: bool,
}

/// Compares a measured-stream evaluation against the true stream it was
/// generated from.
///
/// Containment per frame: `norm` mode tests ||r_meas - r_true|| against
/// k_p times the root-sum-square of the frame's per-coordinate sigmas,
/// k_p being the two-sided normal multiplier for `coverage`;
/// `componentwise` mode requires every coordinate error within k_p times
/// its own sigma.
pub fn validate_against_ground_truth(
    truth: &[Frame],
    measured: &[Frame],
    trace: &EvaluationTrace,
    coverage: f64,
    mode: ContainmentMode,
) -> Result<ValidationRecord, ValidateError> {
    if truth.len() != measured.len() || truth.len() != trace.frames.len() {
        return Err(ValidateError::LengthMismatch {
            truth: truth.len(),
            measured: measured.len(),
            trace: trace.frames.len(),
        });
    }
    let n = truth.len();
    if n < 2 {
        return Err(ValidateError::TooFewFrames { got: n });
    }
    let k_p = normal_quantile((1.0 + coverage) / 2.0)?;
    let entity = &trace.pair.human;

    let mut errors: Vec<[f64; 3]> = Vec::with_capacity(n);
    let mut contained = 0usize;
    let mut pmu_sum = 0.0;
    for (k, ((tf, mf), fe)) in truth.iter().zip(measured).zip(&trace.frames).enumerate() {
        if tf.t != mf.t || mf.t != fe.t {
            return Err(ValidateError::TimestampMismatch { frame: k });
        }
        let missing = |frame| ValidateError::MissingEntity {
            frame,
            entity: entity.clone(),
        };
        let tp = tf.position(entity).ok_or_else(|| missing(k))?;
        let mp = mf.position(entity).ok_or_else(|| missing(k))?;
        let err = [mp[0] - tp[0], mp[1] - tp[1], mp[2] - tp[2]];
        let sigma = fe.tracked_sigma;

        let inside = match mode {
            ContainmentMode::Norm => {
                let err_norm = norm3(err);
                let sigma_norm = norm3(sigma);
                err_norm <= k_p * sigma_norm
            }
            ContainmentMode::Componentwise => err
                .iter()
                .zip(sigma)
                .all(|(e, s)| e.abs() <= k_p * s),
        };
        if inside {
            contained += 1;
        }
        pmu_sum += norm3(sigma);
        errors.push(err);
    }

    let mean_pmu = pmu_sum / n as f64;
    let ground_truth_std = pooled_std(&errors);
    let discrepancy = if ground_truth_std > 0.0 {
        Some((mean_pmu - ground_truth_std).abs() / ground_truth_std)
    } else if mean_pmu == 0.0 {
        // Noiseless stream, zero claimed uncertainty: exact match.
        Some(0.0)
    } else {
        None
    };
    let containment_rate = contained as f64 / n as f64;

    Ok(ValidationRecord {
        frames: n,
        coverage,
        mode,
        contained,
        containment_rate,
        mean_pmu,
        ground_truth_std,
        discrepancy,
        under_covered: containment_rate < coverage - UNDER_COVERAGE_MARGIN,
    })
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Sample std of error vectors about their mean, pooling all three
/// components: sqrt(sum_k ||e_k - mean||^2 / (n - 1)). For isotropic
/// per-coordinate noise sigma this estimates sigma * sqrt(3), the same
/// scale as the root-sum-square PMU it is compared against.
fn pooled_std(errors: &[[f64; 3]]) -> f64 {
    let n = errors.len() as f64;
    let mut mean = [0.0f64; 3];
    for e in errors {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let ss: f64 = errors
        .iter()
        .map(|e| {
            let d = [e[0] - mean[0], e[1] - mean[1], e[2] - mean[2]];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        })
        .sum();
    (ss / (n - 1.0)).sqrt()
}
