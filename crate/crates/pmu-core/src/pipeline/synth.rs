//! Synthetic stream generation with known ground truth.
//!
//! Validating an uncertainty estimator needs an environment where every
//! parameter is controlled: a parametric trajectory provides exact true
//! positions, and the measured stream adds noise drawn from the same
//! NoiseSpec the evaluator will be configured with (or deliberately not,
//! to probe misspecification).

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, NoiseSpec};
use super::frame::Frame;
use crate::rng::stream_rng;

/// Nominal path speeds in m/s, slow to fast. Three levels so speed
/// sweeps have a conventional shape; pass an explicit speed for anything
/// else.
pub const SPEED_PRESETS: [f64; 3] = [0.1, 0.25, 0.5];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("frame rate must be finite and > 0, got {0}")]
    NonPositiveFrameRate(f64),
    #[error("duration must be finite and > 0, got {0}")]
    NonPositiveDuration(f64),
    #[error("speed must be finite and >= 0, got {0}")]
    NegativeSpeed(f64),
    #[error("trajectory is degenerate: {0}")]
    DegeneratePath(&'static str),
    #[error("duration {duration} s at {f_p} fps yields fewer than 2 frames")]
    TooShort { duration: f64, f_p: f64 },
    #[error("entity name collision: {0:?} is both moving and static")]
    EntityCollision(String),
    #[error(transparent)]
    Noise(#[from] ConfigError),
}

/// Path geometry. Linear paths ping-pong between the endpoints; circular
/// paths orbit in the XY plane at constant height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrajectoryKind {
    Linear { from: [f64; 3], to: [f64; 3] },
    Circular { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(flatten)]
    pub kind: TrajectoryKind,
    /// Constant path speed in m/s.
    pub speed: f64,
    /// Name of the moving, noise-carrying entity.
    pub entity: String,
    /// Additional entities at fixed, exactly known positions.
    #[serde(default)]
    pub static_entities: BTreeMap<String, [f64; 3]>,
}

impl TrajectorySpec {
    fn validate(&self) -> Result<(), SynthError> {
        if !self.speed.is_finite() || self.speed < 0.0 {
            return Err(SynthError::NegativeSpeed(self.speed));
        }
        match &self.kind {
            TrajectoryKind::Linear { from, to } => {
                if path_length(*from, *to) <= 0.0 {
                    return Err(SynthError::DegeneratePath("endpoints coincide"));
                }
            }
            TrajectoryKind::Circular { radius, .. } => {
                if !radius.is_finite() || *radius <= 0.0 {
                    return Err(SynthError::DegeneratePath("radius must be > 0"));
                }
            }
        }
        if self.static_entities.contains_key(&self.entity) {
            return Err(SynthError::EntityCollision(self.entity.clone()));
        }
        Ok(())
    }

    /// True position at time `t`.
    fn position(&self, t: f64) -> [f64; 3] {
        match &self.kind {
            TrajectoryKind::Linear { from, to } => {
                let length = path_length(*from, *to);
                // Arc length into the current out-and-back cycle.
                let s = (self.speed * t).rem_euclid(2.0 * length);
                let frac = if s <= length {
                    s / length
                } else {
                    (2.0 * length - s) / length
                };
                [
                    from[0] + frac * (to[0] - from[0]),
                    from[1] + frac * (to[1] - from[1]),
                    from[2] + frac * (to[2] - from[2]),
                ]
            }
            TrajectoryKind::Circular { center, radius } => {
                let theta = self.speed / radius * t;
                [
                    center[0] + radius * theta.cos(),
                    center[1] + radius * theta.sin(),
                    center[2],
                ]
            }
        }
    }
}

fn path_length(from: [f64; 3], to: [f64; 3]) -> f64 {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    let dz = to[2] - from[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Generates `(true, measured)` streams at `f_p` fps over `duration`
/// seconds.
///
/// The moving entity's measured position is its true position plus
/// per-coordinate Gaussian noise with sigmas from `noise` (the velocity
/// term uses the true path speed). Static entities pass through exactly,
/// matching the evaluator's treatment of the reference entity as known.
/// Frame k draws from its own RNG substream, so the output is
/// independent of iteration order and bit-reproducible.
pub fn synth_generate(
    spec: &TrajectorySpec,
    noise: &NoiseSpec,
    f_p: f64,
    duration: f64,
    seed: u64,
) -> Result<(Vec<Frame>, Vec<Frame>), SynthError> {
    if !f_p.is_finite() || f_p <= 0.0 {
        return Err(SynthError::NonPositiveFrameRate(f_p));
    }
    if !duration.is_finite() || duration <= 0.0 {
        return Err(SynthError::NonPositiveDuration(duration));
    }
    spec.validate()?;
    noise.validate()?;

    let count = (duration * f_p).round() as usize;
    if count < 2 {
        return Err(SynthError::TooShort { duration, f_p });
    }
    let dt = 1.0 / f_p;

    let mut truth = Vec::with_capacity(count);
    let mut measured = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 * dt;
        let pos = spec.position(t);

        let mut true_frame = Frame::new(t);
        true_frame.entities.insert(spec.entity.clone(), pos);
        for (name, p) in &spec.static_entities {
            true_frame.entities.insert(name.clone(), *p);
        }

        let sigmas = noise.coordinate_sigmas(pos, spec.speed, dt);
        let mut rng = stream_rng(seed, k as u64);
        let mut noisy = pos;
        for (c, s) in noisy.iter_mut().zip(sigmas) {
            let z: f64 = rng.sample(StandardNormal);
            *c += s * z;
        }
        let mut measured_frame = true_frame.clone();
        measured_frame.entities.insert(spec.entity.clone(), noisy);

        truth.push(true_frame);
        measured.push(measured_frame);
    }
    Ok((truth, measured))
}
