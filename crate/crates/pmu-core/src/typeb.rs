//! Empirical uncertainty estimation from conserved quantities.
//!
//! A tracked rigid segment has constant true length, so the scatter of
//! its measured length across frames is pure measurement noise. The
//! sample standard deviation of that series is a defensible stand-in for
//! the tracker's positional uncertainty when no calibration data exists.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::frame::Frame;

/// Below this many samples the scatter estimate is too unstable to use.
pub const MIN_SERIES_LEN: usize = 30;

/// Means smaller than this leave the relative figure undefined.
const ZERO_MEAN_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeBError {
    #[error("frame {frame} has no entity {joint:?}")]
    MissingJoint { frame: usize, joint: String },
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error("sample {0} is not finite")]
    NonFinite(usize),
}

/// Names a segment whose length should stay constant: the distance
/// between two tracked joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationSpec {
    pub name: String,
    #[serde(rename = "jointA")]
    pub joint_a: String,
    #[serde(rename = "jointB")]
    pub joint_b: String,
}

/// Per-frame length of the segment named by `spec`.
pub fn conserved_series(frames: &[Frame], spec: &ConservationSpec) -> Result<Vec<f64>, TypeBError> {
    frames
        .iter()
        .enumerate()
        .map(|(frame, f)| {
            let a = f.position(&spec.joint_a).ok_or_else(|| TypeBError::MissingJoint {
                frame,
                joint: spec.joint_a.clone(),
            })?;
            let b = f.position(&spec.joint_b).ok_or_else(|| TypeBError::MissingJoint {
                frame,
                joint: spec.joint_b.clone(),
            })?;
            let dx = a[0] - b[0];
            let dy = a[1] - b[1];
            let dz = a[2] - b[2];
            Ok((dx * dx + dy * dy + dz * dz).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeBEstimate {
    /// Mean of the observed series.
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator), in series units.
    pub absolute: f64,
    /// `absolute / |mean|`; absent when the mean is indistinguishable
    /// from zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative: Option<f64>,
    pub samples: usize,
}

/// Scatter of a series whose true value is constant.
pub fn estimate_typeb(series: &[f64]) -> Result<TypeBEstimate, TypeBError> {
    let n = series.len();
    if n < MIN_SERIES_LEN {
        return Err(TypeBError::TooFewSamples {
            got: n,
            min: MIN_SERIES_LEN,
        });
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(TypeBError::NonFinite(i));
    }
    // Two-pass about the first sample rather than zero: constant series
    // come out exactly zero-variance whatever the constant's binary
    // representation, and cancellation error drops for offset-heavy data.
    let base = series[0];
    let shifted_mean = series.iter().map(|v| v - base).sum::<f64>() / n as f64;
    let mean = base + shifted_mean;
    let ss: f64 = series
        .iter()
        .map(|v| {
            let d = (v - base) - shifted_mean;
            d * d
        })
        .sum();
    let absolute = (ss / (n - 1) as f64).sqrt();
    let relative = (mean.abs() > ZERO_MEAN_EPS).then(|| absolute / mean.abs());
    Ok(TypeBEstimate {
        mean,
        absolute,
        relative,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_series_has_zero_scatter() {
        let series = vec![0.40; 64];
        let est = estimate_typeb(&series).unwrap();
        assert_eq!(est.absolute, 0.0);
        assert_eq!(est.relative, Some(0.0));
        assert_eq!(est.mean, 0.40);
        assert_eq!(est.samples, 64);
    }

    #[test]
    fn alternating_series_matches_closed_form() {
        // +-0.01 around 0.40: every deviation is exactly 0.01, so the
        // sample std is 0.01 * sqrt(n / (n - 1)).
        let n = 30;
        let series: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 0.41 } else { 0.39 })
            .collect();
        let est = estimate_typeb(&series).unwrap();
        let expected = 0.01 * (n as f64 / (n - 1) as f64).sqrt();
        assert_relative_eq!(est.absolute, expected, max_relative = 1e-12);
        assert_relative_eq!(est.mean, 0.40, max_relative = 1e-12);
        assert_relative_eq!(est.relative.unwrap(), expected / 0.40, max_relative = 1e-12);
    }

    #[test]
    fn recovers_known_noise_level() {
        let mut rng = stream_rng(0xB0B, 0);
        let series: Vec<f64> = (0..1000)
            .map(|_| 5.0 + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let est = estimate_typeb(&series).unwrap();
        assert_relative_eq!(est.absolute, 0.1, max_relative = 0.05);
        assert_relative_eq!(est.mean, 5.0, max_relative = 0.005);
        assert_relative_eq!(est.relative.unwrap(), 0.02, max_relative = 0.06);
    }

    #[test]
    fn short_series_is_rejected() {
        let series = vec![0.40; MIN_SERIES_LEN - 1];
        assert_eq!(
            estimate_typeb(&series).unwrap_err(),
            TypeBError::TooFewSamples {
                got: MIN_SERIES_LEN - 1,
                min: MIN_SERIES_LEN
            }
        );
        assert!(estimate_typeb(&vec![0.40; MIN_SERIES_LEN]).is_ok());
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        let mut series = vec![0.40; 40];
        series[17] = f64::NAN;
        assert_eq!(estimate_typeb(&series).unwrap_err(), TypeBError::NonFinite(17));
    }

    #[test]
    fn zero_mean_leaves_relative_undefined() {
        let series: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let est = estimate_typeb(&series).unwrap();
        assert_eq!(est.relative, None);
        assert!(est.absolute > 0.0);
    }

    #[test]
    fn segment_length_series_from_frames() {
        let spec = ConservationSpec {
            name: "thigh-left".into(),
            joint_a: "hipL".into(),
            joint_b: "kneeL".into(),
        };
        let mut frames = Vec::new();
        for k in 0..3 {
            let mut f = Frame::new(k as f64 * 0.1);
            // Segment of length 0.5 translating along x.
            f.entities.insert("hipL".into(), [k as f64, 0.0, 1.0]);
            f.entities.insert("kneeL".into(), [k as f64, 0.3, 0.6]);
            frames.push(f);
        }
        let series = conserved_series(&frames, &spec).unwrap();
        assert_eq!(series.len(), 3);
        for v in &series {
            assert_relative_eq!(*v, 0.5, max_relative = 1e-12);
        }

        frames[1].entities.remove("kneeL");
        assert_eq!(
            conserved_series(&frames, &spec).unwrap_err(),
            TypeBError::MissingJoint {
                frame: 1,
                joint: "kneeL".into()
            }
        );
    }

    #[test]
    fn spec_json_field_names() {
        let text = r#"{"name":"thigh-left","jointA":"hipL","jointB":"kneeL"}"#;
        let spec: ConservationSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.joint_a, "hipL");
        assert_eq!(spec.joint_b, "kneeL");
        let back = serde_json::to_string(&spec).unwrap();
        assert_eq!(back, text);
    }
}
