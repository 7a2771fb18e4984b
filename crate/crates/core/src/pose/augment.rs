//! Keypoint-space analogues of horizontal flipping and random cropping.
//!
//! Keypoints with zero confidence are treated as missing and left untouched.

use rand::Rng;

use super::skeleton::{face_flip, hand_flip, BODY_FLIP};
use super::{Dataset, Frame, Keypoint, PoseSequence, Sample};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Isotropic scale in `[0.8, 1.0]`.
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams { flip: false, scale: 1.0, tx: 0.0, ty: 0.0 };

    /// Draws a flip and a scale, then a translation that keeps every present
    /// keypoint of `seq` inside the unit square.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, seq: &PoseSequence) -> Self {
        let flip = rng.random_bool(0.5);
        let scale = rng.random_range(0.8..=1.0);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for_each_point(seq, |k| {
            let x = if flip { 1.0 - k.x } else { k.x };
            lo[0] = lo[0].min(x);
            hi[0] = hi[0].max(x);
            lo[1] = lo[1].min(k.y);
            hi[1] = hi[1].max(k.y);
        });
        let mut t = [0.0; 2];
        for d in 0..2 {
            if lo[d] > hi[d] {
                continue;
            }
            let (min_t, max_t) = (-scale * lo[d], 1.0 - scale * hi[d]);
            t[d] = if max_t > min_t { rng.random_range(min_t..=max_t) } else { min_t };
        }
        AugmentParams { flip, scale, tx: t[0], ty: t[1] }
    }

    fn map_point(&self, k: Keypoint) -> Keypoint {
        if k.c <= 0.0 {
            return k;
        }
        let x = if self.flip { 1.0 - k.x } else { k.x };
        Keypoint {
            x: (self.scale * x + self.tx).clamp(0.0, 1.0),
            y: (self.scale * k.y + self.ty).clamp(0.0, 1.0),
            c: k.c,
        }
    }

    fn map_points(&self, points: &[Keypoint], flip_map: &[usize]) -> Vec<Keypoint> {
        (0..points.len())
            .map(|i| {
                let src = if self.flip { flip_map[i] } else { i };
                self.map_point(points[src])
            })
            .collect()
    }

    pub fn apply(&self, seq: &PoseSequence) -> PoseSequence {
        let face_map = face_flip();
        let hand_map = hand_flip();
        let frames = seq
            .frames
            .iter()
            .map(|f| Frame {
                body: self.map_points(&f.body, &BODY_FLIP),
                face: f.face.as_ref().map(|p| self.map_points(p, &face_map)),
                hands: f.hands.as_ref().map(|p| self.map_points(p, &hand_map)),
                gaze: f.gaze.map(|g| super::Gaze { begin: self.map_point(g.begin), end: self.map_point(g.end) }),
                head_box: f.head_box.map(|b| {
                    let cx = if self.flip { 1.0 - b.cx } else { b.cx };
                    super::HeadBox {
                        cx: (self.scale * cx + self.tx).clamp(0.0, 1.0),
                        cy: (self.scale * b.cy + self.ty).clamp(0.0, 1.0),
                        w: self.scale * b.w,
                        h: self.scale * b.h,
                    }
                }),
            })
            .collect();
        PoseSequence { id: seq.id.clone(), fps: seq.fps, frames }
    }
}

fn for_each_point(seq: &PoseSequence, mut f: impl FnMut(&Keypoint)) {
    for frame in &seq.frames {
        let groups = [Some(&frame.body), frame.face.as_ref(), frame.hands.as_ref()];
        for k in groups.into_iter().flatten().flatten() {
            if k.c > 0.0 {
                f(k);
            }
        }
        if let Some(g) = &frame.gaze {
            [g.begin, g.end].iter().filter(|k| k.c > 0.0).for_each(&mut f);
        }
        if let Some(b) = &frame.head_box {
            f(&Keypoint::new(b.cx, b.cy, 1.0));
        }
    }
}

pub fn augment<R: Rng + ?Sized>(seq: &PoseSequence, rng: &mut R) -> PoseSequence {
    AugmentParams::sample(rng, seq).apply(seq)
}

/// Expands a dataset to `factor` copies per sequence: the original followed
/// by `factor - 1` augmented views, each keyed by `(seed, id, copy)`.
pub fn augment_dataset(ds: &Dataset, factor: usize, master_seed: u64) -> Dataset {
    let mut samples = Vec::with_capacity(ds.len() * factor.max(1));
    for s in &ds.samples {
        samples.push(s.clone());
        let key = seed::hash_str(&s.seq.id);
        for copy in 1..factor {
            let mut rng = seed::rng(master_seed, &[key, copy as u64]);
            let mut seq = augment(&s.seq, &mut rng);
            seq.id = format!("{}~aug{}", s.seq.id, copy);
            samples.push(Sample { seq, label: s.label });
        }
    }
    Dataset { split: ds.split, taxonomy: ds.taxonomy, samples }
}

#[cfg(test)]
mod tests {
    use super::super::skeleton::{LEFT_WRIST, RIGHT_WRIST};
    use super::*;

    fn seq() -> PoseSequence {
        let body: Vec<Keypoint> = (0..17).map(|i| Keypoint::new(0.2 + 0.03 * i as f64, 0.1 + 0.04 * i as f64, 0.9)).collect();
        let mut frame = Frame::body_only(body);
        frame.head_box = Some(super::super::HeadBox { cx: 0.4, cy: 0.2, w: 0.06, h: 0.08 });
        PoseSequence { id: "s".into(), fps: 10, frames: vec![frame; 3] }
    }

    #[test]
    fn flip_swaps_sides_and_mirrors() {
        let s = seq();
        let f = AugmentParams { flip: true, ..AugmentParams::IDENTITY }.apply(&s);
        let (orig, flipped) = (&s.frames[0].body, &f.frames[0].body);
        assert!((flipped[LEFT_WRIST].x - (1.0 - orig[RIGHT_WRIST].x)).abs() < 1e-12);
        assert!((flipped[RIGHT_WRIST].x - (1.0 - orig[LEFT_WRIST].x)).abs() < 1e-12);
        assert_eq!(flipped[LEFT_WRIST].y, orig[RIGHT_WRIST].y);
        assert_eq!(flipped[LEFT_WRIST].c, orig[RIGHT_WRIST].c);
    }

    #[test]
    fn double_flip_restores() {
        let s = seq();
        let p = AugmentParams { flip: true, ..AugmentParams::IDENTITY };
        let back = p.apply(&p.apply(&s));
        for (a, b) in back.frames[0].body.iter().zip(&s.frames[0].body) {
            assert!((a.x - b.x).abs() < 1e-12 && a.y == b.y && a.c == b.c);
        }
    }

    #[test]
    fn identity_crop() {
        let s = seq();
        assert_eq!(AugmentParams::IDENTITY.apply(&s), s);
    }

    #[test]
    fn sampled_views_stay_in_range() {
        let s = seq();
        for i in 0..200 {
            let mut rng = seed::rng(1, &[i]);
            let a = augment(&s, &mut rng);
            assert!(a.frames.iter().all(|f| f.body.iter().all(Keypoint::is_valid)));
        }
    }
}
