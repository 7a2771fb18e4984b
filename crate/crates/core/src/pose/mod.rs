//! Multimodal keypoint sequences, label taxonomies and datasets.

mod augment;
mod jsonl;
pub mod skeleton;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment, augment_dataset, AugmentParams};
pub use jsonl::{load_jsonl, parse_jsonl, write_jsonl, LoadOptions, PadPolicy};
pub use synthetic::{generate_synthetic, split_dataset, SyntheticConfig};

pub const BODY_JOINTS: usize = 17;
pub const FACE_POINTS: usize = 68;
pub const HAND_POINTS: usize = 42;
pub const DEFAULT_FPS: u32 = 10;
pub const DEFAULT_FRAMES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error in {field}: expected {expected}, found {found}")]
    Schema { line: usize, field: String, expected: usize, found: usize },
    #[error("line {line}: {field} value {value} outside [0, 1]")]
    Range { line: usize, field: String, value: f64 },
    #[error("line {line}: sequence has {found} frames, expected {expected}")]
    Length { line: usize, expected: usize, found: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: label error: {message}")]
    Label { line: usize, message: String },
    #[error("dataset error: {0}")]
    Dataset(String),
}

/// A 2D keypoint in normalized image coordinates with a detection confidence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

impl Keypoint {
    pub const MISSING: Keypoint = Keypoint { x: 0.0, y: 0.0, c: 0.0 };

    pub fn new(x: f64, y: f64, c: f64) -> Self {
        Keypoint { x, y, c }
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.c].iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

impl From<[f64; 3]> for Keypoint {
    fn from([x, y, c]: [f64; 3]) -> Self {
        Keypoint { x, y, c }
    }
}

impl From<Keypoint> for [f64; 3] {
    fn from(k: Keypoint) -> Self {
        [k.x, k.y, k.c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaze {
    pub begin: Keypoint,
    pub end: Keypoint,
}

/// Head bounding box: center and size, normalized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct HeadBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl HeadBox {
    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }
}

impl From<[f64; 4]> for HeadBox {
    fn from([cx, cy, w, h]: [f64; 4]) -> Self {
        HeadBox { cx, cy, w, h }
    }
}

impl From<HeadBox> for [f64; 4] {
    fn from(b: HeadBox) -> Self {
        [b.cx, b.cy, b.w, b.h]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub body: Vec<Keypoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<Vec<Keypoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hands: Option<Vec<Keypoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze: Option<Gaze>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_box: Option<HeadBox>,
}

impl Frame {
    pub fn body_only(body: Vec<Keypoint>) -> Self {
        Frame { body, face: None, hands: None, gaze: None, head_box: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub id: String,
    pub fps: u32,
    pub frames: Vec<Frame>,
}

impl PoseSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Body keypoints as a flat `[T, 17, 3]` buffer of `(x, y, c)`.
    pub fn body_features(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.body.iter().flat_map(|k| [k.x, k.y, k.c])).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Interacting,
    Interested,
    NotInterested,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attitude {
    Positive,
    Negative,
}

impl Intent {
    pub const ALL: [Intent; 3] = [Intent::Interacting, Intent::Interested, Intent::NotInterested];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Intent::Interacting => "interacting",
            Intent::Interested => "interested",
            Intent::NotInterested => "not_interested",
        }
    }
}

impl Attitude {
    pub const ALL: [Attitude; 2] = [Attitude::Positive, Attitude::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attitude::Positive => "positive",
            Attitude::Negative => "negative",
        }
    }
}

impl FromStr for Intent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Intent::ALL.into_iter().find(|i| i.name() == s).ok_or_else(|| format!("unknown intent {:?}", s))
    }
}

impl FromStr for Attitude {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Attitude::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| format!("unknown attitude {:?}", s))
    }
}

/// Action label sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    /// Ten first-person interaction classes.
    Jpl,
    /// Six classes recorded from a low quadruped viewpoint.
    Harper,
}

const JPL_ACTIONS: [&str; 10] =
    ["handshake", "hug", "pet", "wave", "punch", "throw", "point", "gaze", "leave", "no_response"];
const HARPER_ACTIONS: [&str; 6] = ["crash", "walk_avoid", "touch", "walk_stop", "punch", "kick"];

impl Taxonomy {
    pub fn actions(self) -> &'static [&'static str] {
        match self {
            Taxonomy::Jpl => &JPL_ACTIONS,
            Taxonomy::Harper => &HARPER_ACTIONS,
        }
    }

    pub fn num_actions(self) -> usize {
        self.actions().len()
    }

    pub fn action_index(self, name: &str) -> Option<usize> {
        self.actions().iter().position(|a| *a == name)
    }

    pub fn action_name(self, index: usize) -> Option<&'static str> {
        self.actions().get(index).copied()
    }

    /// Fixed action -> (intent, attitude) table.
    pub fn hierarchy(self, action: usize) -> crate::Result<(Intent, Attitude)> {
        use Attitude::*;
        use Intent::*;
        let pair = match (self, self.action_name(action)) {
            (_, None) => {
                return Err(crate::Error::Taxonomy(format!(
                    "action index {} outside the {} taxonomy ({} classes)",
                    action,
                    self,
                    self.num_actions()
                )))
            }
            (Taxonomy::Jpl, Some(name)) => match name {
                "handshake" | "hug" | "pet" | "wave" | "point" => (Interacting, Positive),
                "punch" | "throw" => (Interacting, Negative),
                "gaze" => (Interested, Positive),
                _ => (NotInterested, Negative),
            },
            (Taxonomy::Harper, Some(name)) => match name {
                "touch" => (Interacting, Positive),
                "walk_stop" => (Interested, Positive),
                "walk_avoid" => (NotInterested, Negative),
                _ => (Interacting, Negative),
            },
        };
        Ok(pair)
    }

    pub fn hierarchy_by_name(self, action: &str) -> crate::Result<(Intent, Attitude)> {
        let idx = self
            .action_index(action)
            .ok_or_else(|| crate::Error::Taxonomy(format!("unknown action {:?} for the {} taxonomy", action, self)))?;
        self.hierarchy(idx)
    }
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Taxonomy::Jpl => "jpl",
            Taxonomy::Harper => "harper",
        })
    }
}

impl FromStr for Taxonomy {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "jpl" => Ok(Taxonomy::Jpl),
            "harper" => Ok(Taxonomy::Harper),
            _ => Err(crate::Error::Config(format!("unknown taxonomy {:?} (expected jpl or harper)", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabelTriple {
    pub intent: Intent,
    pub attitude: Attitude,
    pub action: usize,
}

impl LabelTriple {
    /// Label whose intent and attitude follow the taxonomy's hierarchy.
    pub fn from_action(taxonomy: Taxonomy, action: usize) -> crate::Result<Self> {
        let (intent, attitude) = taxonomy.hierarchy(action)?;
        Ok(LabelTriple { intent, attitude, action })
    }

    pub fn indices(&self) -> [usize; 3] {
        [self.intent.index(), self.attitude.index(), self.action]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub seq: PoseSequence,
    pub label: LabelTriple,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub taxonomy: Taxonomy,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(split: Split, taxonomy: Taxonomy, samples: Vec<Sample>) -> crate::Result<Self> {
        for s in &samples {
            if s.label.action >= taxonomy.num_actions() {
                return Err(crate::Error::Taxonomy(format!(
                    "sequence {} has action index {} but the {} taxonomy has {} classes",
                    s.seq.id,
                    s.label.action,
                    taxonomy,
                    taxonomy.num_actions()
                )));
            }
        }
        Ok(Dataset { split, taxonomy, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples per action class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.taxonomy.num_actions()];
        for s in &self.samples {
            counts[s.label.action] += 1;
        }
        counts
    }
}

/// Checks that no sequence id appears in more than one split.
pub fn check_disjoint(splits: &[&Dataset]) -> Result<(), DataError> {
    let mut seen = std::collections::HashMap::new();
    for ds in splits {
        for s in &ds.samples {
            if let Some(prev) = seen.insert(s.seq.id.as_str(), ds.split) {
                if prev != ds.split {
                    return Err(DataError::Dataset(format!(
                        "sequence {} appears in both {} and {}",
                        s.seq.id,
                        prev.name(),
                        ds.split.name()
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jpl_hierarchy_table() {
        let t = Taxonomy::Jpl;
        assert_eq!(t.hierarchy_by_name("handshake").unwrap(), (Intent::Interacting, Attitude::Positive));
        assert_eq!(t.hierarchy_by_name("punch").unwrap(), (Intent::Interacting, Attitude::Negative));
        assert_eq!(t.hierarchy_by_name("no_response").unwrap(), (Intent::NotInterested, Attitude::Negative));
        assert_eq!(t.hierarchy_by_name("gaze").unwrap(), (Intent::Interested, Attitude::Positive));
        assert_eq!(t.hierarchy_by_name("leave").unwrap(), (Intent::NotInterested, Attitude::Negative));
        assert!(matches!(t.hierarchy_by_name("dance"), Err(crate::Error::Taxonomy(_))));
        assert!(t.hierarchy(10).is_err());
    }

    #[test]
    fn every_action_maps() {
        for tax in [Taxonomy::Jpl, Taxonomy::Harper] {
            for a in 0..tax.num_actions() {
                let l = LabelTriple::from_action(tax, a).unwrap();
                assert_eq!(l.action, a);
            }
        }
        assert_eq!(Taxonomy::Harper.num_actions(), 6);
    }

    #[test]
    fn dataset_rejects_out_of_range_action() {
        let seq = PoseSequence { id: "a".into(), fps: 10, frames: vec![] };
        let label = LabelTriple { intent: Intent::Interacting, attitude: Attitude::Positive, action: 7 };
        assert!(Dataset::new(Split::Train, Taxonomy::Harper, vec![Sample { seq, label }]).is_err());
    }
}
