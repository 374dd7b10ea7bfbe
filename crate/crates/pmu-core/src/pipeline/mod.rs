//! Frame-stream evaluation: attribute, uncertainty, verdict, report.
//!
//! Each frame yields a human-robot separation distance with its
//! propagated uncertainty; from the second frame on, an approach speed
//! derived from consecutive distances. Limits are judged against the
//! worst-case bound and the stream aggregates into a per-hour dangerous
//! failure rate.
//!
//! Only the tracked (human) entity carries measurement noise; the
//! reference (robot) side enters with zero uncertainty, its commanded
//! pose being known to the controller far more precisely than anything
//! the camera sees.

pub mod config;
pub mod frame;
pub mod synth;
pub mod validate;

use serde::Serialize;
use thiserror::Error;

use crate::analytic::{propagate_correlated, AnalyticError};
use crate::distributions::{Distribution, DistributionError, InputSet};
use crate::model::MeasurementModel;
use crate::montecarlo::{propagate_mc, McConfig, McError, PropagationResult};
use crate::rng::derive_seed;
use crate::safety::{check_limit, FrameVerdict, SafetyError, SafetyReport};
use config::{PairSpec, PipelineConfig, PropagationMethod};
use frame::Frame;

/// Substream tags keeping the per-frame distance and speed propagations
/// on disjoint RNG streams.
const SEED_TAG_DISTANCE: u64 = 0;
const SEED_TAG_SPEED: u64 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("need at least 2 frames, got {got}")]
    TooFewFrames { got: usize },
    #[error("frame {frame} has no entity {entity:?}")]
    MissingEntity { frame: usize, entity: String },
    #[error("frame {frame} does not advance time")]
    NonMonotone { frame: usize },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
}

/// One limit applied to one frame's attribute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitVerdict {
    pub attribute: String,
    pub lambda: f64,
    /// Uncertainty entering the worst-case bound (standard or expanded
    /// per the limit's mode).
    pub u_applied: f64,
    pub safe: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameEvaluation {
    pub frame: usize,
    pub t: f64,
    /// Per-coordinate sigma assigned to the tracked entity this frame.
    pub tracked_sigma: [f64; 3],
    pub distance: PropagationResult,
    /// Approach speed; absent on the first frame (backward difference
    /// needs history).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed: Option<PropagationResult>,
    pub verdicts: Vec<LimitVerdict>,
    pub safe: bool,
    /// Worst margin across this frame's verdicts; infinite when no limit
    /// applied.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationTrace {
    pub pair: PairSpec,
    /// Mean frame rate over the stream, frames per second.
    pub f_p: f64,
    pub report: SafetyReport,
    pub frames: Vec<FrameEvaluation>,
}

struct PrevFrame {
    t: f64,
    human: [f64; 3],
    d_est: f64,
    d_u: f64,
}

/// Evaluates a parsed stream under `config`.
///
/// Deterministic: the Monte-Carlo seed for frame k's distance and speed
/// substreams derives from the config seed and the frame index alone, so
/// identical (frames, config) yield a bit-identical trace.
pub fn evaluate_stream(
    frames: &[Frame],
    config: &PipelineConfig,
) -> Result<EvaluationTrace, PipelineError> {
    config.validate()?;
    let model = config.model.build()?;
    let rate_model = MeasurementModel::relative_speed();

    if frames.len() < 2 {
        return Err(PipelineError::TooFewFrames { got: frames.len() });
    }
    for k in 1..frames.len() {
        if frames[k].t <= frames[k - 1].t {
            return Err(PipelineError::NonMonotone { frame: k });
        }
    }
    let n = frames.len();
    let f_p = (n - 1) as f64 / (frames[n - 1].t - frames[0].t);

    let mut evaluations: Vec<FrameEvaluation> = Vec::with_capacity(n);
    let mut frame_verdicts: Vec<FrameVerdict> = Vec::with_capacity(n);
    let mut prev: Option<PrevFrame> = None;

    for (k, f) in frames.iter().enumerate() {
        let human = f
            .position(&config.pair.human)
            .ok_or_else(|| PipelineError::MissingEntity {
                frame: k,
                entity: config.pair.human.clone(),
            })?;
        let robot = f
            .position(&config.pair.robot)
            .ok_or_else(|| PipelineError::MissingEntity {
                frame: k,
                entity: config.pair.robot.clone(),
            })?;

        // Speed entering the noise model is the measured backward
        // difference; the first frame has no history and gets the
        // motionless sigma.
        let (speed_est, dt) = match &prev {
            None => (0.0, 0.0),
            Some(p) => {
                let dt = f.t - p.t;
                let dx = human[0] - p.human[0];
                let dy = human[1] - p.human[1];
                let dz = human[2] - p.human[2];
                ((dx * dx + dy * dy + dz * dz).sqrt() / dt, dt)
            }
        };
        let sigma = config.noise.coordinate_sigmas(human, speed_est, dt);

        let coords = [
            (human[0], sigma[0]),
            (human[1], sigma[1]),
            (human[2], sigma[2]),
            (robot[0], 0.0),
            (robot[1], 0.0),
            (robot[2], 0.0),
        ];
        let inputs = model
            .input_names()
            .iter()
            .zip(coords)
            .map(|(name, (mean, std))| Ok((name.clone(), Distribution::gaussian(mean, std)?)))
            .collect::<Result<Vec<_>, DistributionError>>()?;
        let set = InputSet::independent(inputs)?;
        let distance = propagate_attribute(&model, &set, config, k, SEED_TAG_DISTANCE)?;

        let speed = match &prev {
            None => None,
            Some(p) => {
                let set = InputSet::independent(vec![
                    ("d_prev".into(), Distribution::gaussian(p.d_est, p.d_u)?),
                    ("d_curr".into(), Distribution::gaussian(distance.estimate, distance.u_prop)?),
                    ("dt".into(), Distribution::gaussian(dt, 0.0)?),
                ])?;
                let rate = propagate_attribute(&rate_model, &set, config, k, SEED_TAG_SPEED)?;
                Some(approach_from_rate(rate))
            }
        };

        let mut verdicts = Vec::new();
        for limit in &config.limits {
            let result = match limit.attribute.as_str() {
                "distance" => Some(&distance),
                "speed" => speed.as_ref(),
                other => unreachable!("config validation admits only distance/speed, got {other}"),
            };
            // A speed limit cannot be judged on the first frame.
            let Some(result) = result else { continue };
            let u_applied = limit.mode.select(result);
            let v = check_limit(result.estimate, u_applied, limit)?;
            verdicts.push(LimitVerdict {
                attribute: limit.attribute.clone(),
                lambda: limit.lambda,
                u_applied,
                safe: v.safe,
                margin: v.margin,
            });
        }
        let safe = verdicts.iter().all(|v| v.safe);
        let margin = verdicts.iter().map(|v| v.margin).fold(f64::INFINITY, f64::min);

        frame_verdicts.push(FrameVerdict {
            frame: k,
            t: f.t,
            safe,
            margin,
        });
        prev = Some(PrevFrame {
            t: f.t,
            human,
            d_est: distance.estimate,
            d_u: distance.u_prop,
        });
        evaluations.push(FrameEvaluation {
            frame: k,
            t: f.t,
            tracked_sigma: sigma,
            distance,
            speed,
            verdicts,
            safe,
            margin,
        });
    }

    let report = SafetyReport::from_verdicts(frame_verdicts, f_p, config.threshold)?;
    Ok(EvaluationTrace {
        pair: config.pair.clone(),
        f_p,
        report,
        frames: evaluations,
    })
}

fn propagate_attribute(
    model: &MeasurementModel,
    inputs: &InputSet,
    config: &PipelineConfig,
    frame: usize,
    tag: u64,
) -> Result<PropagationResult, PipelineError> {
    match config.mc.method {
        PropagationMethod::MonteCarlo => Ok(propagate_mc(
            model,
            inputs,
            &McConfig {
                trials: config.mc.trials,
                seed: derive_seed(config.mc.seed, &[frame as u64, tag]),
                coverage: config.mc.coverage,
                retain_sample: false,
            },
        )?),
        PropagationMethod::Analytic => Ok(propagate_correlated(model, inputs)?),
    }
}

/// Turns a signed separation rate into the approach-speed attribute:
/// max(0, -rate), negative rate meaning the distance is shrinking.
///
/// The clamp maps the rate interval through the same monotone transform
/// and leaves u_prop untouched. Sensitivities are dropped: the clamp has
/// no derivative at zero.
fn approach_from_rate(rate: PropagationResult) -> PropagationResult {
    let (lo, hi) = rate.interval;
    PropagationResult {
        estimate: (-rate.estimate).max(0.0),
        interval: ((-hi).max(0.0), (-lo).max(0.0)),
        sensitivities: None,
        ..rate
    }
}
