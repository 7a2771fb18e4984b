//! Spatiotemporal corruption of body keypoints and its warm-up schedule.
//!
//! Temporal corruption wipes `round(t·T)` whole frames. In every remaining
//! frame, `round(s·17)` joints are corrupted, drawn afresh per frame. Only
//! the body modality is touched.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pose::{Keypoint, PoseSequence, BODY_JOINTS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// `(x, y, c) = (0, 0, 0)`.
    #[default]
    Zero,
    /// Uniform random coordinates and confidence.
    Noise,
}

impl CorruptionMode {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionMode::Zero => "zero",
            CorruptionMode::Noise => "noise",
        }
    }
}

impl std::str::FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(CorruptionMode::Zero),
            "noise" => Ok(CorruptionMode::Noise),
            _ => Err(Error::Config(format!("unknown corruption mode {:?} (expected zero or noise)", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub spatial_rate: f64,
    pub temporal_rate: f64,
    #[serde(default)]
    pub mode: CorruptionMode,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_warmup() -> usize {
    30
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec { spatial_rate: 0.3, temporal_rate: 0.3, mode: CorruptionMode::Zero, warmup_epochs: 30, seed: 0 }
    }
}

impl CorruptionSpec {
    pub fn new(spatial_rate: f64, temporal_rate: f64, mode: CorruptionMode) -> Self {
        CorruptionSpec { spatial_rate, temporal_rate, mode, ..Default::default() }
    }

    pub fn clean() -> Self {
        CorruptionSpec::new(0.0, 0.0, CorruptionMode::Zero)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("spatial_rate", self.spatial_rate), ("temporal_rate", self.temporal_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("corruption {} must lie in [0, 1], got {}", name, v)));
            }
        }
        Ok(())
    }

    /// Same spec at different rates.
    pub fn with_rates(&self, spatial_rate: f64, temporal_rate: f64) -> Self {
        CorruptionSpec { spatial_rate, temporal_rate, ..*self }
    }

    pub fn is_identity(&self) -> bool {
        corrupted_joints(self.spatial_rate) == 0 && self.temporal_rate == 0.0
    }
}

/// Joints corrupted in each clean frame.
pub fn corrupted_joints(spatial_rate: f64) -> usize {
    ((spatial_rate * BODY_JOINTS as f64).round() as usize).min(BODY_JOINTS)
}

/// Frames wiped out of a `frames`-long sequence.
pub fn corrupted_frames(temporal_rate: f64, frames: usize) -> usize {
    ((temporal_rate * frames as f64).round() as usize).min(frames)
}

fn corrupt_point<R: Rng + ?Sized>(mode: CorruptionMode, rng: &mut R) -> Keypoint {
    match mode {
        CorruptionMode::Zero => Keypoint::MISSING,
        CorruptionMode::Noise => Keypoint::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()),
    }
}

/// Applies the spec's rates to the body keypoints of `seq`.
pub fn corrupt_sequence<R: Rng + ?Sized>(seq: &PoseSequence, spec: &CorruptionSpec, rng: &mut R) -> PoseSequence {
    let mut out = seq.clone();
    let frames = seq.len();
    let n_frames = corrupted_frames(spec.temporal_rate, frames);
    let n_joints = corrupted_joints(spec.spatial_rate);
    if n_frames == 0 && n_joints == 0 {
        return out;
    }
    let mut wiped = vec![false; frames];
    for t in sample(rng, frames, n_frames) {
        wiped[t] = true;
    }
    for (t, frame) in out.frames.iter_mut().enumerate() {
        if wiped[t] {
            for k in frame.body.iter_mut() {
                *k = corrupt_point(spec.mode, rng);
            }
        } else if n_joints > 0 {
            for j in sample(rng, BODY_JOINTS, n_joints) {
                frame.body[j] = corrupt_point(spec.mode, rng);
            }
        }
    }
    out
}

/// Corruption rates in effect at `epoch`: a linear ramp from zero that
/// reaches the spec's targets at `warmup_epochs`.
pub fn scheduled_rates(spec: &CorruptionSpec, epoch: usize) -> (f64, f64) {
    let frac = if spec.warmup_epochs == 0 { 1.0 } else { (epoch as f64 / spec.warmup_epochs as f64).min(1.0) };
    (spec.spatial_rate * frac, spec.temporal_rate * frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Frame;
    use crate::seed;

    fn seq(frames: usize) -> PoseSequence {
        let body: Vec<Keypoint> = (0..17).map(|j| Keypoint::new(0.1 + 0.05 * j as f64, 0.5, 0.9)).collect();
        PoseSequence { id: "s".into(), fps: 10, frames: vec![Frame::body_only(body); frames] }
    }

    #[test]
    fn zero_rates_are_identity() {
        let s = seq(10);
        let mut rng = seed::rng(0, &[]);
        assert_eq!(corrupt_sequence(&s, &CorruptionSpec::clean(), &mut rng), s);
    }

    #[test]
    fn full_spatial_rate_zeroes_everything() {
        let s = seq(10);
        let mut rng = seed::rng(0, &[]);
        let c = corrupt_sequence(&s, &CorruptionSpec::new(1.0, 0.0, CorruptionMode::Zero), &mut rng);
        assert!(c.frames.iter().all(|f| f.body.iter().all(|k| *k == Keypoint::MISSING)));
    }

    #[test]
    fn exact_counts_per_frame() {
        let s = seq(10);
        let spec = CorruptionSpec::new(0.3, 0.3, CorruptionMode::Zero);
        for i in 0..50 {
            let c = corrupt_sequence(&s, &spec, &mut seed::rng(7, &[i]));
            let per_frame: Vec<usize> =
                c.frames.iter().map(|f| f.body.iter().filter(|k| **k == Keypoint::MISSING).count()).collect();
            assert_eq!(per_frame.iter().filter(|&&n| n == 17).count(), 3);
            assert_eq!(per_frame.iter().filter(|&&n| n == 5).count(), 7);
        }
    }

    #[test]
    fn noise_mode_stays_valid() {
        let s = seq(10);
        let spec = CorruptionSpec::new(0.5, 0.5, CorruptionMode::Noise);
        let c = corrupt_sequence(&s, &spec, &mut seed::rng(1, &[]));
        assert!(c.frames.iter().all(|f| f.body.iter().all(Keypoint::is_valid)));
        assert_ne!(c, s);
    }

    #[test]
    fn ramp() {
        let spec = CorruptionSpec::new(0.3, 0.3, CorruptionMode::Zero);
        assert_eq!(scheduled_rates(&spec, 0), (0.0, 0.0));
        let (s, _) = scheduled_rates(&spec, 15);
        assert!((s - 0.15).abs() < 1e-12);
        assert_eq!(scheduled_rates(&spec, 30), (0.3, 0.3));
        assert_eq!(scheduled_rates(&spec, 100), (0.3, 0.3));
        let instant = CorruptionSpec { warmup_epochs: 0, ..spec };
        assert_eq!(scheduled_rates(&instant, 0), (0.3, 0.3));
    }

    #[test]
    fn rates_outside_unit_interval_rejected() {
        assert!(CorruptionSpec::new(1.2, 0.0, CorruptionMode::Zero).validate().is_err());
        assert!(CorruptionSpec::new(0.2, -0.1, CorruptionMode::Zero).validate().is_err());
    }
}
