//! One-sequence-per-line JSON ingestion and export.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    Attitude, DataError, Dataset, Frame, Intent, Keypoint, LabelTriple, PoseSequence, Sample, Split, Taxonomy,
    BODY_JOINTS, DEFAULT_FRAMES, FACE_POINTS, HAND_POINTS,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadPolicy {
    /// Sequences shorter than the window are an error.
    #[default]
    Reject,
    /// Short sequences are padded by repeating their last frame.
    RepeatLast,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadOptions {
    pub taxonomy: Taxonomy,
    pub split: Split,
    pub frames: usize,
    pub pad_policy: PadPolicy,
    /// Reject keys the schema does not define.
    pub strict: bool,
}

impl LoadOptions {
    pub fn new(taxonomy: Taxonomy, split: Split) -> Self {
        LoadOptions { taxonomy, split, frames: DEFAULT_FRAMES, pad_policy: PadPolicy::Reject, strict: true }
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    fps: u32,
    frames: Vec<Frame>,
    labels: Labels,
}

#[derive(Serialize, Deserialize)]
struct Labels {
    intent: String,
    attitude: String,
    action: String,
}

const TOP_KEYS: &[&str] = &["id", "fps", "frames", "labels"];
const FRAME_KEYS: &[&str] = &["body", "face", "hands", "gaze", "head_box"];
const GAZE_KEYS: &[&str] = &["begin", "end"];
const LABEL_KEYS: &[&str] = &["intent", "attitude", "action"];

fn check_keys(line: usize, v: &Value, allowed: &[&str]) -> std::result::Result<(), DataError> {
    if let Value::Object(map) = v {
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(DataError::UnknownKey { line, key: k.clone() });
        }
    }
    Ok(())
}

fn check_strict(line: usize, v: &Value) -> std::result::Result<(), DataError> {
    check_keys(line, v, TOP_KEYS)?;
    if let Some(labels) = v.get("labels") {
        check_keys(line, labels, LABEL_KEYS)?;
    }
    if let Some(Value::Array(frames)) = v.get("frames") {
        for f in frames {
            check_keys(line, f, FRAME_KEYS)?;
            if let Some(g) = f.get("gaze") {
                check_keys(line, g, GAZE_KEYS)?;
            }
        }
    }
    Ok(())
}

fn check_points(line: usize, field: &str, points: &[Keypoint], expected: usize) -> std::result::Result<(), DataError> {
    if points.len() != expected {
        return Err(DataError::Schema { line, field: field.into(), expected, found: points.len() });
    }
    for (i, k) in points.iter().enumerate() {
        for (name, v) in [("x", k.x), ("y", k.y), ("c", k.c)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DataError::Range { line, field: format!("{}[{}].{}", field, i, name), value: v });
            }
        }
    }
    Ok(())
}

fn validate_frame(line: usize, f: &Frame) -> std::result::Result<(), DataError> {
    check_points(line, "body", &f.body, BODY_JOINTS)?;
    if let Some(face) = &f.face {
        check_points(line, "face", face, FACE_POINTS)?;
    }
    if let Some(hands) = &f.hands {
        check_points(line, "hands", hands, HAND_POINTS)?;
    }
    if let Some(g) = &f.gaze {
        check_points(line, "gaze", &[g.begin, g.end], 2)?;
    }
    if let Some(b) = &f.head_box {
        for (name, v) in [("cx", b.cx), ("cy", b.cy), ("w", b.w), ("h", b.h)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DataError::Range { line, field: format!("head_box.{}", name), value: v });
            }
        }
    }
    Ok(())
}

fn parse_record(line: usize, text: &str, opts: &LoadOptions) -> Result<Sample> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| DataError::Parse { line, message: e.to_string() })?;
    if opts.strict {
        check_strict(line, &value)?;
    }
    let mut rec: Record =
        serde_json::from_value(value).map_err(|e| DataError::Parse { line, message: e.to_string() })?;
    if rec.fps == 0 {
        return Err(DataError::Parse { line, message: "fps must be positive".into() }.into());
    }
    for f in &rec.frames {
        validate_frame(line, f)?;
    }
    let found = rec.frames.len();
    if found < opts.frames && found > 0 && opts.pad_policy == PadPolicy::RepeatLast {
        let last = rec.frames[found - 1].clone();
        rec.frames.resize(opts.frames, last);
    }
    if rec.frames.len() != opts.frames {
        return Err(DataError::Length { line, expected: opts.frames, found }.into());
    }

    let label_err = |message: String| Error::from(DataError::Label { line, message });
    let action = opts
        .taxonomy
        .action_index(&rec.labels.action)
        .ok_or_else(|| label_err(format!("unknown action {:?} for the {} taxonomy", rec.labels.action, opts.taxonomy)))?;
    let intent: Intent = rec.labels.intent.parse().map_err(label_err)?;
    let attitude: Attitude = rec.labels.attitude.parse().map_err(label_err)?;
    let expected = opts.taxonomy.hierarchy(action)?;
    if expected != (intent, attitude) {
        return Err(label_err(format!(
            "action {} implies ({}, {}), record says ({}, {})",
            rec.labels.action,
            expected.0.name(),
            expected.1.name(),
            intent.name(),
            attitude.name()
        )));
    }
    Ok(Sample {
        seq: PoseSequence { id: rec.id, fps: rec.fps, frames: rec.frames },
        label: LabelTriple { intent, attitude, action },
    })
}

/// Parses JSONL text. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_jsonl(text: &str, opts: &LoadOptions) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        samples.push(parse_record(i + 1, line, opts)?);
    }
    let ds = Dataset::new(opts.split, opts.taxonomy, samples)?;
    let mut ids = std::collections::HashSet::new();
    if let Some(dup) = ds.samples.iter().find(|s| !ids.insert(s.seq.id.as_str())) {
        return Err(DataError::Dataset(format!("duplicate sequence id {}", dup.seq.id)).into());
    }
    Ok(ds)
}

pub fn load_jsonl(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, opts)
}

/// Serializes a dataset, one record per line, in sample order.
pub fn to_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for s in &ds.samples {
        let rec = Record {
            id: s.seq.id.clone(),
            fps: s.seq.fps,
            frames: s.seq.frames.clone(),
            labels: Labels {
                intent: s.label.intent.name().into(),
                attitude: s.label.attitude.name().into(),
                action: ds.taxonomy.action_name(s.label.action).unwrap_or_default().into(),
            },
        };
        out.push_str(&serde_json::to_string(&rec).expect("records always serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(ds)).map_err(|e| Error::io(path, e))
}
