//! Keypoint sequences as stacks of Gaussian heatmaps.
//!
//! A keypoint `(x, y, c)` lands at grid position `(x·(W−1), y·(H−1))`, so the
//! image corners coincide with the corner cells. Each cell `(u, v)` holds
//! `c · exp(−((u−kx)² + (v−ky)²) / 2σ²)`, evaluated densely.

use serde::{Deserialize, Serialize};

use crate::pose::skeleton::COCO_EDGES;
use crate::pose::{Frame, HeadBox, Keypoint, PoseSequence};
use crate::tensor::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Pose,
    Face,
    Hands,
    Gaze,
    /// Rasterized skeleton drawing standing in for the RGB frame.
    Image,
}

impl Modality {
    pub const ALL: [Modality; 5] = [Modality::Pose, Modality::Face, Modality::Hands, Modality::Gaze, Modality::Image];

    /// Number of heatmap channels (joints) the modality contributes.
    pub fn channels(self) -> usize {
        match self {
            Modality::Pose => 17,
            Modality::Face => 68,
            Modality::Hands => 42,
            Modality::Gaze => 2,
            Modality::Image => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Pose => "pose",
            Modality::Face => "face",
            Modality::Hands => "hands",
            Modality::Gaze => "gaze",
            Modality::Image => "image",
        }
    }

    /// Whether every frame of `seq` carries this modality.
    pub fn present_in(self, seq: &PoseSequence) -> bool {
        seq.frames.iter().all(|f| match self {
            Modality::Pose | Modality::Image => true,
            Modality::Face => f.face.is_some(),
            Modality::Hands => f.hands.is_some(),
            Modality::Gaze => f.gaze.is_some(),
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality {:?}", s)))
    }
}

/// `T × J × H × W` heatmap volume for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack<R> {
    pub modality: Modality,
    pub frames: usize,
    pub joints: usize,
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub data: Vec<R>,
}

impl<R: Real> HeatmapStack<R> {
    pub fn zeros(modality: Modality, frames: usize, grid: (usize, usize), sigma: f64) -> Self {
        let joints = modality.channels();
        HeatmapStack {
            modality,
            frames,
            joints,
            height: grid.0,
            width: grid.1,
            sigma,
            data: vec![R::zero(); frames * joints * grid.0 * grid.1],
        }
    }

    pub fn get(&self, t: usize, j: usize, y: usize, x: usize) -> R {
        self.data[((t * self.joints + j) * self.height + y) * self.width + x]
    }

    /// The `H × W` map of one joint in one frame.
    pub fn map(&self, t: usize, j: usize) -> &[R] {
        let hw = self.height * self.width;
        let start = (t * self.joints + j) * hw;
        &self.data[start..start + hw]
    }

    /// Reorders to `J × T × H × W` (channels, depth, height, width) for 3D
    /// convolution.
    pub fn channels_first(&self) -> Vec<R> {
        let hw = self.height * self.width;
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.joints {
            for t in 0..self.frames {
                out.extend_from_slice(self.map(t, j));
            }
        }
        debug_assert_eq!(out.len(), hw * self.joints * self.frames);
        out
    }
}

fn check_grid(grid: (usize, usize), sigma: f64) -> Result<()> {
    if grid.0 == 0 || grid.1 == 0 {
        return Err(Error::Config(format!("heatmap grid must be non-empty, got {:?}", grid)));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("heatmap sigma must be positive, got {}", sigma)));
    }
    Ok(())
}

/// Cells below this are stored as exact zeros. Far-field Gaussian tails
/// would otherwise land in the subnormal range, which slows every
/// downstream convolution by an order of magnitude.
pub const FLUSH_BELOW: f64 = 1e-10;

/// Writes one keypoint's Gaussian into an `H × W` buffer.
pub fn render_keypoint<R: Real>(k: &Keypoint, grid: (usize, usize), sigma: f64, out: &mut [R]) {
    let (h, w) = grid;
    debug_assert_eq!(out.len(), h * w);
    if k.c <= 0.0 {
        out.iter_mut().for_each(|v| *v = R::zero());
        return;
    }
    let kx = k.x * (w.max(1) - 1) as f64;
    let ky = k.y * (h.max(1) - 1) as f64;
    let denom = 2.0 * sigma * sigma;
    let gx: Vec<f64> = (0..w).map(|u| (-(u as f64 - kx).powi(2) / denom).exp()).collect();
    for v in 0..h {
        let gy = k.c * (-(v as f64 - ky).powi(2) / denom).exp();
        for (u, cell) in out[v * w..(v + 1) * w].iter_mut().enumerate() {
            let v = gy * gx[u];
            *cell = if v < FLUSH_BELOW { R::zero() } else { R::from_f64_lossy(v) };
        }
    }
}

fn modality_points(frame: &Frame, modality: Modality) -> Option<Vec<Keypoint>> {
    match modality {
        Modality::Pose => Some(frame.body.clone()),
        Modality::Face => frame.face.clone(),
        Modality::Hands => frame.hands.clone(),
        Modality::Gaze => frame.gaze.map(|g| vec![g.begin, g.end]),
        Modality::Image => None,
    }
}

/// Gaussian heatmaps of one modality for every frame of `seq`. The image
/// modality is delegated to [`rasterize_skeleton`].
pub fn keypoints_to_heatmaps<R: Real>(
    seq: &PoseSequence,
    modality: Modality,
    grid: (usize, usize),
    sigma: f64,
) -> Result<HeatmapStack<R>> {
    check_grid(grid, sigma)?;
    if modality == Modality::Image {
        let mut stack = rasterize_skeleton(seq, grid)?;
        stack.sigma = sigma;
        return Ok(stack);
    }
    let mut stack = HeatmapStack::zeros(modality, seq.len(), grid, sigma);
    let hw = grid.0 * grid.1;
    let joints = stack.joints;
    for (t, frame) in seq.frames.iter().enumerate() {
        let points = modality_points(frame, modality).ok_or_else(|| {
            Error::Modality(format!("sequence {} frame {} has no {} keypoints", seq.id, t, modality.name()))
        })?;
        if points.len() != joints {
            return Err(Error::Modality(format!(
                "sequence {} frame {}: {} has {} points, expected {}",
                seq.id,
                t,
                modality.name(),
                points.len(),
                joints
            )));
        }
        for (j, k) in points.iter().enumerate() {
            let start = (t * joints + j) * hw;
            render_keypoint(k, grid, sigma, &mut stack.data[start..start + hw]);
        }
    }
    Ok(stack)
}

/// Gaze segment from the head-box center along `direction`, one head-box
/// diagonal long, clamped to the image.
pub fn gaze_to_keypoints(head_box: &HeadBox, direction: (f64, f64)) -> Result<(Keypoint, Keypoint)> {
    let norm = direction.0.hypot(direction.1);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateGaze(format!("direction {:?} has no usable length", direction)));
    }
    let diag = head_box.diagonal();
    let begin = Keypoint::new(head_box.cx, head_box.cy, 1.0);
    let end = Keypoint::new(
        (head_box.cx + direction.0 / norm * diag).clamp(0.0, 1.0),
        (head_box.cy + direction.1 / norm * diag).clamp(0.0, 1.0),
        1.0,
    );
    Ok((begin, end))
}

fn to_cell(k: &Keypoint, grid: (usize, usize)) -> (i64, i64) {
    let x = (k.x * (grid.1 - 1) as f64).round() as i64;
    let y = (k.y * (grid.0 - 1) as f64).round() as i64;
    (x.clamp(0, grid.1 as i64 - 1), y.clamp(0, grid.0 as i64 - 1))
}

/// Visits every cell of the Bresenham line from `a` to `b`, endpoints
/// included.
pub fn bresenham(a: (i64, i64), b: (i64, i64), mut visit: impl FnMut(i64, i64)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        visit(x, y);
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// One-channel skeleton drawing per frame: unit-intensity bones between
/// joint pairs whose confidences are both positive.
pub fn rasterize_skeleton<R: Real>(seq: &PoseSequence, grid: (usize, usize)) -> Result<HeatmapStack<R>> {
    check_grid(grid, 1.0)?;
    let mut stack = HeatmapStack::zeros(Modality::Image, seq.len(), grid, 0.0);
    let hw = grid.0 * grid.1;
    for (t, frame) in seq.frames.iter().enumerate() {
        let canvas = &mut stack.data[t * hw..(t + 1) * hw];
        for &(a, b) in COCO_EDGES.iter() {
            let (ka, kb) = (&frame.body[a], &frame.body[b]);
            if ka.c <= 0.0 || kb.c <= 0.0 {
                continue;
            }
            bresenham(to_cell(ka, grid), to_cell(kb, grid), |x, y| {
                canvas[y as usize * grid.1 + x as usize] = R::one();
            });
        }
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Gaze;

    fn single(k: Keypoint) -> PoseSequence {
        let mut body = vec![Keypoint::MISSING; 17];
        body[0] = k;
        PoseSequence { id: "s".into(), fps: 10, frames: vec![Frame::body_only(body)] }
    }

    #[test]
    fn peak_and_neighbour_values() {
        let grid = (17, 17);
        let k = Keypoint::new(8.0 / 16.0, 8.0 / 16.0, 1.0);
        let h: HeatmapStack<f64> = keypoints_to_heatmaps(&single(k), Modality::Pose, grid, 1.0).unwrap();
        assert!((h.get(0, 0, 8, 8) - 1.0).abs() < 1e-12);
        assert!((h.get(0, 0, 8, 9) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((h.get(0, 0, 9, 8) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn zero_confidence_gives_zero_map() {
        let h: HeatmapStack<f32> =
            keypoints_to_heatmaps(&single(Keypoint::new(0.3, 0.4, 0.0)), Modality::Pose, (8, 8), 1.0).unwrap();
        assert!(h.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_modality_is_reported() {
        let err = keypoints_to_heatmaps::<f32>(&single(Keypoint::MISSING), Modality::Face, (8, 8), 1.0).unwrap_err();
        assert!(matches!(err, Error::Modality(_)));
    }

    #[test]
    fn gaze_endpoint_rule() {
        let b = HeadBox { cx: 0.5, cy: 0.5, w: 0.06, h: 0.08 };
        let (begin, end) = gaze_to_keypoints(&b, (1.0, 0.0)).unwrap();
        assert_eq!((begin.x, begin.y, begin.c), (0.5, 0.5, 1.0));
        assert!((end.x - 0.6).abs() < 1e-12 && end.y == 0.5 && end.c == 1.0);
        let (_, end) = gaze_to_keypoints(&b, (0.0, 1.0)).unwrap();
        assert!(end.x == 0.5 && (end.y - 0.6).abs() < 1e-12);
        let edge = HeadBox { cx: 0.98, ..b };
        let (_, end) = gaze_to_keypoints(&edge, (1.0, 0.0)).unwrap();
        assert_eq!((end.x, end.y), (1.0, 0.5));
        assert!(matches!(gaze_to_keypoints(&b, (0.0, 0.0)), Err(Error::DegenerateGaze(_))));
    }

    #[test]
    fn gaze_modality_uses_both_endpoints() {
        let mut seq = single(Keypoint::MISSING);
        seq.frames[0].gaze =
            Some(Gaze { begin: Keypoint::new(0.0, 0.0, 1.0), end: Keypoint::new(1.0, 1.0, 0.5) });
        let h: HeatmapStack<f64> = keypoints_to_heatmaps(&seq, Modality::Gaze, (5, 5), 1.0).unwrap();
        assert_eq!(h.joints, 2);
        assert!((h.get(0, 0, 0, 0) - 1.0).abs() < 1e-12);
        assert!((h.get(0, 1, 4, 4) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn skeleton_line_between_corners() {
        let mut body = vec![Keypoint::MISSING; 17];
        body[15] = Keypoint::new(0.0, 0.0, 1.0);
        body[13] = Keypoint::new(1.0, 1.0, 1.0);
        let seq = PoseSequence { id: "s".into(), fps: 10, frames: vec![Frame::body_only(body)] };
        let r: HeatmapStack<f32> = rasterize_skeleton(&seq, (12, 20)).unwrap();
        let lit = r.data.iter().filter(|&&v| v > 0.0).count();
        assert!(lit >= 12, "{lit}");
        assert!(r.data.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn skeleton_of_missing_body_is_blank() {
        let r: HeatmapStack<f32> = rasterize_skeleton(&single(Keypoint::MISSING), (8, 8)).unwrap();
        assert!(r.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channels_first_layout() {
        let mut seq = single(Keypoint::new(0.0, 0.0, 1.0));
        seq.frames.push(seq.frames[0].clone());
        seq.frames[1].body[0] = Keypoint::new(1.0, 1.0, 1.0);
        let h: HeatmapStack<f64> = keypoints_to_heatmaps(&seq, Modality::Pose, (4, 4), 1.0).unwrap();
        let cf = h.channels_first();
        assert_eq!(&cf[..16], h.map(0, 0));
        assert_eq!(&cf[16..32], h.map(1, 0));
        assert_eq!(&cf[32..48], h.map(0, 1));
    }
}
