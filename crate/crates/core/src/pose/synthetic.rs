//! Procedural social-interaction sequences.
//!
//! A canonical standing skeleton is animated by a per-class motion primitive
//! and rendered together with matching face, hand and gaze tracks. Distinct
//! classes share body cues to different degrees (attending versus ignoring
//! differ mostly in head yaw, which the gaze track makes explicit), so the
//! pose-only task stays harder than the multimodal one.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Frame, Gaze, HeadBox, Keypoint, LabelTriple, PoseSequence, Sample, Split, Taxonomy};
use super::{DEFAULT_FPS, DEFAULT_FRAMES};
use crate::heatmap::gaze_to_keypoints;
use crate::seed::{self, Rng as SeqRng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_per_class: usize,
    pub taxonomy: Taxonomy,
    /// Standard deviation of the per-keypoint Gaussian jitter, in normalized
    /// image units.
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: u32,
}

fn default_frames() -> usize {
    DEFAULT_FRAMES
}

fn default_fps() -> u32 {
    DEFAULT_FPS
}

impl SyntheticConfig {
    pub fn new(taxonomy: Taxonomy, n_per_class: usize, seed: u64) -> Self {
        SyntheticConfig { n_per_class, taxonomy, noise_std: 0.01, seed, frames: DEFAULT_FRAMES, fps: DEFAULT_FPS }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum HandShape {
    Open,
    Fist,
    Point,
    Relaxed,
}

/// Planar arm pose: angles from straight down, positive away from the body.
#[derive(Clone, Copy, Debug, Default)]
struct Arm {
    upper: f64,
    fore: f64,
    /// 0 = in the image plane, 1 = fully toward the camera (foreshortened).
    reach: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct Leg {
    thigh: f64,
    shin: f64,
}

#[derive(Clone, Copy, Debug)]
struct BodyState {
    cx: f64,
    cy: f64,
    scale: f64,
    /// Head yaw in [-1, 1]; positive looks toward image right.
    yaw: f64,
    /// Torso rotation away from the camera in [0, 1].
    turn: f64,
    crouch: f64,
    left_arm: Arm,
    right_arm: Arm,
    left_leg: Leg,
    right_leg: Leg,
    left_hand: HandShape,
    right_hand: HandShape,
    smile: f64,
    gaze: (f64, f64),
}

impl BodyState {
    fn resting(cx: f64, cy: f64, scale: f64) -> Self {
        let rest = Arm { upper: 0.12, fore: 0.15, reach: 0.0 };
        BodyState {
            cx,
            cy,
            scale,
            yaw: 0.0,
            turn: 0.0,
            crouch: 0.0,
            left_arm: rest,
            right_arm: rest,
            left_leg: Leg::default(),
            right_leg: Leg::default(),
            left_hand: HandShape::Relaxed,
            right_hand: HandShape::Relaxed,
            smile: 0.0,
            gaze: (0.0, 1.0),
        }
    }

    fn arm_mut(&mut self, left: bool) -> &mut Arm {
        if left {
            &mut self.left_arm
        } else {
            &mut self.right_arm
        }
    }

    fn hand_mut(&mut self, left: bool) -> &mut HandShape {
        if left {
            &mut self.left_hand
        } else {
            &mut self.right_hand
        }
    }
}

fn smoothstep(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    v * v * (3.0 - 2.0 * v)
}

fn deg(d: f64) -> f64 {
    d * PI / 180.0
}

/// Per-sequence random draws shared by every frame.
struct Script {
    action: &'static str,
    cx: f64,
    cy: f64,
    scale: f64,
    onset: f64,
    duration: f64,
    /// Which arm/leg performs one-sided actions (`true` = left).
    left: bool,
    /// Lateral direction for turning, drifting and looking away.
    side: f64,
    approach: f64,
    drift: f64,
    yaw: f64,
    smile: f64,
    a: [f64; 4],
    freq: f64,
    phase: f64,
    camera: (f64, f64),
}

impl Script {
    fn draw(action: &'static str, rng: &mut SeqRng) -> Self {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let mut s = Script {
            action,
            cx: u(0.38, 0.62),
            cy: u(0.52, 0.6),
            scale: u(0.42, 0.62),
            onset: u(0.0, 0.3),
            duration: u(0.45, 0.75),
            left: false,
            side,
            approach: 0.0,
            drift: 0.0,
            yaw: 0.0,
            smile: 0.0,
            a: [u(0.0, 1.0), u(0.0, 1.0), u(0.0, 1.0), u(0.0, 1.0)],
            freq: u(1.5, 3.0),
            phase: u(0.0, 2.0 * PI),
            camera: (0.5 + u(-0.05, 0.05), 0.35 + u(-0.05, 0.05)),
        };
        s.left = rng.random_bool(0.25);
        let normal = Normal::new(0.0, 0.12).expect("valid sigma");
        let engaged_yaw = normal.sample(rng);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        match action {
            "handshake" => (s.approach, s.smile, s.yaw) = (u(0.15, 0.35), u(0.3, 0.8), engaged_yaw),
            "hug" => (s.approach, s.smile, s.yaw) = (u(0.2, 0.4), u(0.5, 1.0), engaged_yaw),
            "pet" => (s.approach, s.smile, s.yaw) = (u(0.05, 0.2), u(0.3, 0.9), engaged_yaw),
            "wave" => (s.approach, s.smile, s.yaw) = (u(-0.03, 0.05), u(0.4, 1.0), engaged_yaw),
            "punch" => (s.approach, s.smile, s.yaw) = (u(0.05, 0.2), u(-1.0, -0.4), engaged_yaw),
            "throw" => (s.approach, s.smile, s.yaw) = (u(-0.05, 0.1), u(-0.9, -0.2), engaged_yaw),
            "point" => (s.approach, s.smile, s.yaw) = (u(-0.03, 0.05), u(-0.1, 0.5), side * u(0.2, 0.5)),
            "gaze" => (s.approach, s.smile, s.yaw) = (u(-0.02, 0.03), u(0.0, 0.5), engaged_yaw),
            "leave" => {
                (s.approach, s.smile, s.drift) = (u(-0.35, -0.15), u(-0.5, 0.1), side * u(0.08, 0.2));
            }
            "no_response" => (s.approach, s.smile, s.yaw) = (u(-0.02, 0.03), u(-0.5, 0.2), side * u(0.15, 0.6)),
            "crash" => (s.approach, s.smile, s.yaw) = (u(0.5, 0.8), u(-0.3, 0.3), engaged_yaw),
            "walk_avoid" => {
                (s.approach, s.smile, s.drift) = (u(0.2, 0.4), u(-0.5, 0.1), side * u(0.15, 0.3));
            }
            "touch" => (s.approach, s.smile, s.yaw) = (u(0.2, 0.35), u(0.3, 0.9), engaged_yaw),
            "walk_stop" => (s.approach, s.smile, s.yaw) = (u(0.25, 0.4), u(0.2, 0.8), engaged_yaw),
            "kick" => (s.approach, s.smile, s.yaw) = (u(0.0, 0.15), u(-1.0, -0.3), engaged_yaw),
            _ => unreachable!("every taxonomy action has a script"),
        }
        s
    }

    fn look_at_camera(&self, st: &BodyState) -> (f64, f64) {
        (self.camera.0 - st.cx, self.camera.1 - (st.cy - 0.41 * st.scale))
    }

    fn state(&self, tn: f64) -> BodyState {
        let p = smoothstep((tn - self.onset) / self.duration);
        let a = &self.a;
        let lerp = |lo: f64, hi: f64, v: f64| lo + (hi - lo) * v;
        let grow = 1.0 + self.approach * tn;
        let mut st = BodyState::resting(self.cx + self.drift * tn, self.cy, self.scale * grow);
        st.cx += 0.008 * (2.0 * PI * 0.5 * tn + self.phase).sin();
        st.yaw = self.yaw;
        st.smile = self.smile;
        st.gaze = self.look_at_camera(&st);
        let left = self.left;
        let walk = |st: &mut BodyState, amount: f64| {
            let swing = amount * (2.0 * PI * self.freq * tn + self.phase).sin();
            st.left_leg.thigh = deg(12.0) * swing;
            st.right_leg.thigh = -deg(12.0) * swing;
            st.left_arm.upper = deg(8.0) - deg(14.0) * swing;
            st.right_arm.upper = deg(8.0) + deg(14.0) * swing;
        };
        match self.action {
            "handshake" => {
                *st.arm_mut(left) = Arm {
                    upper: p * deg(lerp(25.0, 45.0, a[0])),
                    fore: p * deg(lerp(55.0, 80.0, a[1])),
                    reach: 0.4 * p,
                };
                *st.hand_mut(left) = HandShape::Open;
            }
            "hug" => {
                let open = smoothstep(p / 0.6);
                let close = smoothstep((p - 0.6) / 0.4);
                let arm = Arm {
                    upper: open * deg(lerp(60.0, 85.0, a[0])),
                    fore: open * deg(lerp(60.0, 85.0, a[1])) - close * deg(lerp(100.0, 140.0, a[2])),
                    reach: 0.3 * p,
                };
                st.left_arm = arm;
                st.right_arm = arm;
                st.left_hand = HandShape::Open;
                st.right_hand = HandShape::Open;
            }
            "pet" => {
                st.crouch = p * lerp(0.4, 0.8, a[2]);
                *st.arm_mut(left) = Arm {
                    upper: p * deg(lerp(15.0, 35.0, a[0])),
                    fore: p * deg(lerp(5.0, 25.0, a[1])),
                    reach: 0.3 * p,
                };
                *st.hand_mut(left) = HandShape::Open;
                st.gaze = (0.1 * self.side, 1.0);
            }
            "wave" => {
                let up = deg(lerp(100.0, 130.0, a[0]));
                let amp = deg(lerp(20.0, 35.0, a[1]));
                let osc = amp * (2.0 * PI * self.freq * tn + self.phase).sin();
                *st.arm_mut(left) = Arm { upper: p * up, fore: p * (up + deg(40.0) + osc), reach: 0.0 };
                *st.hand_mut(left) = HandShape::Open;
            }
            "punch" => {
                let strike = lerp(0.35, 0.7, a[2]);
                let q = smoothstep((tn - strike) / 0.15);
                *st.arm_mut(left) = Arm {
                    upper: lerp(deg(20.0), deg(lerp(70.0, 90.0, a[0])), q),
                    fore: lerp(deg(150.0), deg(lerp(75.0, 95.0, a[1])), q),
                    reach: 0.8 * q,
                };
                *st.hand_mut(left) = HandShape::Fist;
                st.crouch = 0.1;
            }
            "throw" => {
                *st.arm_mut(left) = Arm {
                    upper: lerp(deg(lerp(140.0, 170.0, a[0])), deg(lerp(40.0, 70.0, a[1])), p),
                    fore: lerp(deg(lerp(170.0, 200.0, a[2])), deg(lerp(30.0, 60.0, a[3])), p),
                    reach: 0.3 * p,
                };
                *st.hand_mut(left) = HandShape::Fist;
            }
            "point" => {
                let up = deg(lerp(70.0, 100.0, a[0]));
                *st.arm_mut(left) = Arm { upper: p * up, fore: p * (up + deg(lerp(-10.0, 10.0, a[1]))), reach: 0.1 };
                *st.hand_mut(left) = HandShape::Point;
                let side = if left { 1.0 } else { -1.0 };
                st.gaze = (side, -0.1);
                st.yaw = side * self.yaw.abs();
            }
            "gaze" => {}
            "leave" => {
                walk(&mut st, 1.0);
                st.turn = p * lerp(0.5, 1.0, a[0]);
                st.yaw = self.side * p * lerp(0.5, 1.0, a[1]);
                st.gaze = (self.side, lerp(-0.3, 0.3, a[2]));
            }
            "no_response" => {
                st.gaze = (self.side, lerp(-0.3, 0.5, a[2]));
            }
            "crash" => {
                walk(&mut st, 1.0);
                st.cx = lerp(self.cx, 0.5, tn);
            }
            "walk_avoid" => {
                walk(&mut st, 1.0);
                st.cx = self.cx + self.drift * p;
                st.turn = 0.6 * p;
                if p > 0.5 {
                    st.gaze = (self.side, 0.0);
                }
            }
            "touch" => {
                *st.arm_mut(left) = Arm {
                    upper: p * deg(lerp(20.0, 40.0, a[0])),
                    fore: p * deg(lerp(20.0, 45.0, a[1])),
                    reach: 0.6 * p,
                };
                *st.hand_mut(left) = HandShape::Open;
            }
            "walk_stop" => {
                let moving = 1.0 - smoothstep(tn / 0.5);
                walk(&mut st, moving);
                st.scale = self.scale * (1.0 + self.approach * smoothstep(tn / 0.5) * 0.5);
            }
            "kick" => {
                let leg = Leg { thigh: p * deg(lerp(40.0, 80.0, a[0])), shin: p * deg(lerp(-20.0, 40.0, a[1])) };
                if left {
                    st.left_leg = leg;
                } else {
                    st.right_leg = leg;
                }
                st.left_arm.upper = p * deg(25.0);
                st.right_arm.upper = p * deg(25.0);
            }
            _ => unreachable!(),
        }
        st
    }
}

const UPPER_ARM: f64 = 0.17;
const FOREARM: f64 = 0.15;
const THIGH: f64 = 0.23;
const SHIN: f64 = 0.23;

struct Rendered {
    body: Vec<(f64, f64)>,
    face: Vec<(f64, f64)>,
    /// Confidence multiplier for every face landmark: a face turned away
    /// from the camera is detected less reliably.
    face_visibility: f64,
    hands: Vec<(f64, f64)>,
    /// Per-point confidence multiplier; curled fingers self-occlude.
    hand_visibility: Vec<f64>,
    head_box: HeadBox,
    gaze_dir: (f64, f64),
}

fn limb(origin: (f64, f64), side: f64, angle: f64, len: f64) -> (f64, f64) {
    (origin.0 + side * len * angle.sin(), origin.1 + len * angle.cos())
}

fn face_template(smile: f64) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(68);
    for i in 0..17 {
        let a = PI * i as f64 / 16.0;
        pts.push((-0.5 * a.cos(), 0.05 + 0.55 * a.sin()));
    }
    let frown = (-smile).max(0.0) * 0.08;
    for i in 0..5 {
        let u = -0.4 + 0.075 * i as f64;
        pts.push((u, -0.35 + frown * (i as f64 / 4.0)));
    }
    for i in 0..5 {
        let u = 0.1 + 0.075 * i as f64;
        pts.push((u, -0.35 + frown * (1.0 - i as f64 / 4.0)));
    }
    for i in 0..4 {
        pts.push((0.0, -0.25 + 0.0833 * i as f64));
    }
    for (u, v) in [(-0.12, 0.03), (-0.06, 0.05), (0.0, 0.06), (0.06, 0.05), (0.12, 0.03)] {
        pts.push((u, v));
    }
    for c in [-0.22, 0.22] {
        for (du, dv) in [(-0.09, 0.0), (-0.03, -0.035), (0.03, -0.035), (0.09, 0.0), (0.03, 0.035), (-0.03, 0.035)] {
            pts.push((c + du, -0.18 + dv));
        }
    }
    let corner = 0.28 - 0.06 * smile;
    let inner_corner = 0.285 - 0.05 * smile;
    pts.extend_from_slice(&[
        (-0.2, corner),
        (-0.12, 0.24),
        (-0.05, 0.23),
        (0.0, 0.235),
        (0.05, 0.23),
        (0.12, 0.24),
        (0.2, corner),
        (0.12, 0.33),
        (0.05, 0.345),
        (0.0, 0.35),
        (-0.05, 0.345),
        (-0.12, 0.33),
        (-0.15, inner_corner),
        (-0.05, 0.265),
        (0.0, 0.265),
        (0.05, 0.265),
        (0.15, inner_corner),
        (0.05, 0.305),
        (0.0, 0.31),
        (-0.05, 0.305),
    ]);
    debug_assert_eq!(pts.len(), 68);
    pts
}

fn hand_points(
    wrist: (f64, f64),
    elbow: (f64, f64),
    shape: HandShape,
    side: f64,
    len: f64,
) -> (Vec<(f64, f64)>, Vec<f64>) {
    let (dx, dy) = (wrist.0 - elbow.0, wrist.1 - elbow.1);
    let norm = dx.hypot(dy).max(1e-9);
    let dir = (dx / norm, dy / norm);
    let perp = (-dir.1 * side, dir.0 * side);
    let curls: [f64; 5] = match shape {
        HandShape::Open => [0.0; 5],
        HandShape::Fist => [0.5, 1.0, 1.0, 1.0, 1.0],
        HandShape::Point => [0.6, 0.0, 1.0, 1.0, 1.0],
        HandShape::Relaxed => [0.3, 0.4, 0.4, 0.4, 0.4],
    };
    let offsets = [-0.35, -0.15, 0.0, 0.12, 0.24];
    let spread = if shape == HandShape::Open { 1.4 } else { 1.0 };
    let mut pts = vec![wrist];
    let mut vis = vec![1.0];
    for f in 0..5 {
        let base_along = if f == 0 { 0.2 } else { 0.45 };
        let mut p = (
            wrist.0 + len * (base_along * dir.0 + spread * offsets[f] * perp.0),
            wrist.1 + len * (base_along * dir.1 + spread * offsets[f] * perp.1),
        );
        pts.push(p);
        vis.push(1.0 - 0.3 * curls[f]);
        let mut d = dir;
        for _ in 0..3 {
            let angle = curls[f] * deg(55.0);
            let (c, s) = (angle.cos(), angle.sin());
            d = (c * d.0 - s * side * d.1, s * side * d.0 + c * d.1);
            p = (p.0 + 0.17 * len * d.0, p.1 + 0.17 * len * d.1);
            pts.push(p);
            vis.push(1.0 - 0.7 * curls[f]);
        }
    }
    (pts, vis)
}

fn render(st: &BodyState) -> Rendered {
    let s = st.scale;
    let to_img = |p: (f64, f64)| (st.cx + s * p.0, st.cy + s * p.1);
    let drop = 0.12 * st.crouch;
    let narrow = 1.0 - 0.6 * st.turn;
    let shoulder_y = -0.30 + drop;
    let head = (0.0, -0.41 + drop);
    let yaw = st.yaw;

    let mut body = vec![(0.0, 0.0); 17];
    body[0] = (head.0 + 0.035 * yaw, head.1 + 0.01);
    body[1] = (head.0 + 0.025 + 0.02 * yaw, head.1 - 0.01);
    body[2] = (head.0 - 0.025 + 0.02 * yaw, head.1 - 0.01);
    body[3] = (head.0 + 0.05 * (1.0 - 0.4 * yaw.max(0.0)), head.1);
    body[4] = (head.0 - 0.05 * (1.0 + 0.4 * yaw.min(0.0)), head.1);
    let shw = 0.11 * narrow;
    body[5] = (shw, shoulder_y);
    body[6] = (-shw, shoulder_y);
    let mut elbows = [(0.0, 0.0); 2];
    for (k, (arm, side)) in [(st.left_arm, 1.0), (st.right_arm, -1.0)].into_iter().enumerate() {
        let shoulder = body[5 + k];
        let shrink = 1.0 - 0.5 * arm.reach;
        let elbow = limb(shoulder, side, arm.upper, UPPER_ARM * shrink);
        let wrist = limb(elbow, side, arm.fore, FOREARM * shrink);
        body[7 + k] = elbow;
        body[9 + k] = wrist;
        elbows[k] = elbow;
    }
    let hhw = 0.07 * narrow;
    let hip_y = 0.5 * drop;
    body[11] = (hhw, hip_y);
    body[12] = (-hhw, hip_y);
    for (k, (leg, side)) in [(st.left_leg, 1.0), (st.right_leg, -1.0)].into_iter().enumerate() {
        let hip = body[11 + k];
        let bend = st.crouch * deg(50.0);
        let knee = limb(hip, side, leg.thigh - bend * 0.3, THIGH * (1.0 - 0.3 * st.crouch));
        let ankle = limb(knee, side, leg.shin + bend * 0.2, SHIN);
        body[13 + k] = knee;
        body[15 + k] = ankle;
    }

    let face_width = 0.11;
    let face = face_template(st.smile)
        .into_iter()
        .map(|(u, v)| {
            let u = u * (1.0 - 0.3 * yaw.abs()) + 0.2 * yaw * (1.0 - 1.5 * u.abs()).max(0.0);
            to_img((head.0 + face_width * u, head.1 + face_width * v))
        })
        .collect();

    let body_img: Vec<(f64, f64)> = body.iter().map(|&p| to_img(p)).collect();
    let hand_len = 0.07 * s;
    let (mut hands, mut hand_visibility) = hand_points(body_img[9], to_img(elbows[0]), st.left_hand, 1.0, hand_len);
    let (right, right_vis) = hand_points(body_img[10], to_img(elbows[1]), st.right_hand, -1.0, hand_len);
    hands.extend(right);
    hand_visibility.extend(right_vis);

    let center = to_img((head.0 + 0.01 * yaw, head.1 - 0.01));
    Rendered {
        body: body_img,
        face,
        face_visibility: 1.0 - 0.7 * yaw.abs().max(st.turn).min(1.0),
        hands,
        hand_visibility,
        head_box: HeadBox { cx: center.0, cy: center.1, w: 0.12 * s, h: 0.15 * s },
        gaze_dir: st.gaze,
    }
}

fn jitter_point(
    p: (f64, f64),
    conf_range: (f64, f64),
    visibility: f64,
    noise: &Option<Normal<f64>>,
    rng: &mut SeqRng,
) -> Keypoint {
    let (nx, ny) = match noise {
        Some(n) => (n.sample(rng), n.sample(rng)),
        None => (0.0, 0.0),
    };
    Keypoint {
        x: (p.0 + nx).clamp(0.0, 1.0),
        y: (p.1 + ny).clamp(0.0, 1.0),
        c: visibility * rng.random_range(conf_range.0..=conf_range.1),
    }
}

fn synth_sequence(cfg: &SyntheticConfig, action: usize, index: usize) -> Result<PoseSequence> {
    let name = cfg.taxonomy.action_name(action).expect("action index from taxonomy");
    let mut rng = seed::rng(cfg.seed, &[seed::hash_str(&cfg.taxonomy.to_string()), action as u64, index as u64]);
    let script = Script::draw(name, &mut rng);
    let noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).expect("positive std"));
    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let tn = if cfg.frames > 1 { t as f64 / (cfg.frames - 1) as f64 } else { 0.0 };
        let r = render(&script.state(tn));
        let body = r.body.iter().map(|&p| jitter_point(p, (0.75, 1.0), 1.0, &noise, &mut rng)).collect();
        let face =
            r.face.iter().map(|&p| jitter_point(p, (0.6, 1.0), r.face_visibility, &noise, &mut rng)).collect();
        let hands = r
            .hands
            .iter()
            .zip(&r.hand_visibility)
            .map(|(&p, &v)| jitter_point(p, (0.5, 1.0), v, &noise, &mut rng))
            .collect();
        let hb = HeadBox {
            cx: r.head_box.cx.clamp(0.0, 1.0),
            cy: r.head_box.cy.clamp(0.0, 1.0),
            w: r.head_box.w,
            h: r.head_box.h,
        };
        let (begin, end) = gaze_to_keypoints(&hb, r.gaze_dir)?;
        frames.push(Frame {
            body,
            face: Some(face),
            hands: Some(hands),
            gaze: Some(Gaze { begin, end }),
            head_box: Some(hb),
        });
    }
    Ok(PoseSequence { id: format!("{}-{}-{:05}", cfg.taxonomy, name, index), fps: cfg.fps, frames })
}

/// Class-balanced synthetic dataset (tagged as the training split; use
/// [`split_dataset`] to partition it).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    if cfg.frames == 0 || cfg.fps == 0 {
        return Err(Error::Config("frames and fps must be positive".into()));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(Error::Config(format!("noise_std must be a finite non-negative number, got {}", cfg.noise_std)));
    }
    let mut samples = Vec::with_capacity(cfg.n_per_class * cfg.taxonomy.num_actions());
    for action in 0..cfg.taxonomy.num_actions() {
        let label = LabelTriple::from_action(cfg.taxonomy, action)?;
        for i in 0..cfg.n_per_class {
            samples.push(Sample { seq: synth_sequence(cfg, action, i)?, label });
        }
    }
    Dataset::new(Split::Train, cfg.taxonomy, samples)
}

/// Stratified split by class into train/val/test. Within each class the
/// sequences are shuffled, then the first `round(f_train * n)` go to train and
/// `round(f_val * n)` to val; the remainder is test.
pub fn split_dataset(ds: &Dataset, fractions: [f64; 3], master_seed: u64) -> Result<[Dataset; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {:?} must be in [0,1] and sum to 1", fractions)));
    }
    let mut parts: [Vec<Sample>; 3] = Default::default();
    for action in 0..ds.taxonomy.num_actions() {
        let mut members: Vec<&Sample> = ds.samples.iter().filter(|s| s.label.action == action).collect();
        let mut rng = seed::rng(master_seed, &[0x5_9117, action as u64]);
        rand::seq::SliceRandom::shuffle(members.as_mut_slice(), &mut rng);
        let n = members.len();
        let n_train = (fractions[0] * n as f64).round() as usize;
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        for (i, s) in members.into_iter().enumerate() {
            let part = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            parts[part].push(s.clone());
        }
    }
    let [train, val, test] = parts;
    Ok([
        Dataset::new(Split::Train, ds.taxonomy, train)?,
        Dataset::new(Split::Val, ds.taxonomy, val)?,
        Dataset::new(Split::Test, ds.taxonomy, test)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::super::jsonl::{parse_jsonl, to_jsonl, LoadOptions};
    use super::super::skeleton::{LEFT_WRIST, RIGHT_WRIST};
    use super::*;

    #[test]
    fn class_balanced_counts() {
        let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, 5, 1)).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.class_counts(), vec![5; 10]);
        let harper = generate_synthetic(&SyntheticConfig::new(Taxonomy::Harper, 2, 1)).unwrap();
        assert_eq!(harper.class_counts(), vec![2; 6]);
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SyntheticConfig { noise_std: 0.0, ..SyntheticConfig::new(Taxonomy::Jpl, 2, 9) };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 10, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn generated_sequences_pass_validation() {
        for tax in [Taxonomy::Jpl, Taxonomy::Harper] {
            let ds = generate_synthetic(&SyntheticConfig::new(tax, 4, 3)).unwrap();
            let back = parse_jsonl(&to_jsonl(&ds), &LoadOptions::new(tax, Split::Train)).unwrap();
            assert_eq!(back, ds);
        }
    }

    fn wrist_displacement_variance(seq: &PoseSequence) -> f64 {
        let mut steps = Vec::new();
        for w in seq.frames.windows(2) {
            for j in [LEFT_WRIST, RIGHT_WRIST] {
                let (a, b) = (w[0].body[j], w[1].body[j]);
                steps.push((b.x - a.x).hypot(b.y - a.y));
            }
        }
        let mean = steps.iter().sum::<f64>() / steps.len() as f64;
        steps.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / steps.len() as f64
    }

    #[test]
    fn waving_moves_wrists_more_than_no_response() {
        let cfg = SyntheticConfig::new(Taxonomy::Jpl, 20, 4);
        let ds = generate_synthetic(&cfg).unwrap();
        let wave = Taxonomy::Jpl.action_index("wave").unwrap();
        let idle = Taxonomy::Jpl.action_index("no_response").unwrap();
        let var_of = |action: usize| -> f64 {
            let v: Vec<f64> = ds
                .samples
                .iter()
                .filter(|s| s.label.action == action)
                .map(|s| wrist_displacement_variance(&s.seq))
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(var_of(wave) > var_of(idle), "wave {} vs idle {}", var_of(wave), var_of(idle));
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, 20, 2)).unwrap();
        let [train, val, test] = split_dataset(&ds, [0.7, 0.15, 0.15], 5).unwrap();
        assert_eq!(train.class_counts(), vec![14; 10]);
        assert_eq!(val.class_counts(), vec![3; 10]);
        assert_eq!(test.class_counts(), vec![3; 10]);
        super::super::check_disjoint(&[&train, &val, &test]).unwrap();
    }

    #[test]
    fn zero_per_class_is_a_config_error() {
        assert!(matches!(generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, 0, 1)), Err(Error::Config(_))));
    }
}
