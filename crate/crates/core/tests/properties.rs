//! Randomized invariants of losses, metrics, corruption and heatmaps.

use proptest::prelude::*;
use socialkd::corruption::{corrupt_sequence, corrupted_frames, corrupted_joints, CorruptionMode, CorruptionSpec};
use socialkd::distill::{cosine_similarity, infonce_loss};
use socialkd::eval::task_metrics;
use socialkd::heatmap::render_keypoint;
use socialkd::pose::{Frame, Keypoint, PoseSequence};
use socialkd::seed;
use socialkd::tensor::Tape;

fn infonce(teacher: &[f64], student: &[f64], n: usize, tau: f64, symmetric: bool) -> f64 {
    let d = teacher.len() / n;
    let mut tape = Tape::<f64>::new();
    let t = tape.constant(&[n, d], teacher.to_vec()).unwrap();
    let s = tape.constant(&[n, d], student.to_vec()).unwrap();
    let l = infonce_loss(&mut tape, t, s, tau, symmetric).unwrap();
    tape.value(l).unwrap()[0]
}

fn batch(n: usize, d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n * d)
}

fn body_sequence(frames: usize) -> PoseSequence {
    let body: Vec<Keypoint> = (0..17).map(|j| Keypoint::new(0.2 + 0.03 * j as f64, 0.4, 0.8)).collect();
    PoseSequence { id: "p".into(), fps: 10, frames: vec![Frame::body_only(body); frames] }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn infonce_is_nonnegative_and_bounded_by_uniform(
        (n, t, s) in (2usize..6).prop_flat_map(|n| (Just(n), batch(n, 4), batch(n, 4))),
        tau in 0.05f64..2.0,
        symmetric in any::<bool>(),
    ) {
        let l = infonce(&t, &s, n, tau, symmetric);
        prop_assert!(l >= 0.0);
        // Logits lie in [-1/tau, 1/tau], so each row's loss is at most
        // ln(1 + (N-1) e^{2/tau}).
        let bound = (1.0 + (n as f64 - 1.0) * (2.0 / tau).exp()).ln();
        prop_assert!(l <= bound + 1e-9);
    }

    #[test]
    fn infonce_ignores_positive_row_scaling(
        (n, t, s) in (2usize..5).prop_flat_map(|n| (Just(n), batch(n, 3), batch(n, 3))),
        scales in prop::collection::vec(0.1f64..10.0, 5),
    ) {
        let scaled: Vec<f64> = s.iter().enumerate().map(|(i, v)| v * scales[i / 3]).collect();
        let a = infonce(&t, &s, n, 0.1, false);
        let b = infonce(&t, &scaled, n, 0.1, false);
        prop_assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
    }

    #[test]
    fn infonce_falls_as_alignment_rises(n in 2usize..6, tau in 0.05f64..1.0, mix in 0.0f64..0.9) {
        // One-hot teacher rows; the student blends its positive with a
        // uniform vector, so more blending means a weaker positive.
        let d = n;
        let teacher: Vec<f64> = (0..n * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
        let blend = |m: f64| -> Vec<f64> { teacher.iter().map(|v| (1.0 - m) * v + m / d as f64).collect() };
        let sharp = infonce(&teacher, &blend(mix), n, tau, false);
        let blurred = infonce(&teacher, &blend((mix + 0.1).min(1.0)), n, tau, false);
        prop_assert!(sharp <= blurred + 1e-12);
    }

    #[test]
    fn cosine_is_bounded_and_scale_free(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6), k in 0.01f64..100.0) {
        let c = cosine_similarity(&a, &b);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        let scaled: Vec<f64> = a.iter().map(|v| v * k).collect();
        prop_assert!((cosine_similarity(&scaled, &b) - c).abs() < 1e-9);
    }

    #[test]
    fn macro_f1_and_accuracy_ranges(truth in prop::collection::vec(0usize..4, 1..60), noise in prop::collection::vec(0usize..4, 60)) {
        let pred: Vec<usize> = truth.iter().zip(&noise).map(|(t, n)| if n % 2 == 0 { *t } else { *n }).collect();
        let m = task_metrics(&truth, &pred, 4);
        prop_assert!((0.0..=100.0).contains(&m.accuracy));
        prop_assert!((0.0..=100.0).contains(&m.macro_f1));
        let total: usize = m.confusion.iter().flatten().sum();
        prop_assert_eq!(total, truth.len());
        let perfect = task_metrics(&truth, &truth, 4);
        prop_assert_eq!(perfect.accuracy, 100.0);
        let supported = (0..4).filter(|c| truth.contains(c)).count() as f64;
        prop_assert!((perfect.macro_f1 - 100.0 * supported / 4.0).abs() < 1e-9);
    }

    #[test]
    fn metrics_ignore_sample_order(pairs in prop::collection::vec((0usize..3, 0usize..3), 2..40), rot in 0usize..40) {
        let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let k = rot % pairs.len();
        let (mut t2, mut p2) = (truth.clone(), pred.clone());
        t2.rotate_left(k);
        p2.rotate_left(k);
        prop_assert_eq!(task_metrics(&truth, &pred, 3), task_metrics(&t2, &p2, 3));
    }

    #[test]
    fn corruption_counts_are_exact(s in 0.0f64..=1.0, t in 0.0f64..=1.0, frames in 1usize..16, key in any::<u64>()) {
        let seq = body_sequence(frames);
        let spec = CorruptionSpec::new(s, t, CorruptionMode::Zero);
        let out = corrupt_sequence(&seq, &spec, &mut seed::rng(key, &[]));
        let per_frame: Vec<usize> = out.frames.iter().map(|f| f.body.iter().filter(|k| **k == Keypoint::MISSING).count()).collect();
        let wiped = per_frame.iter().filter(|&&c| c == 17).count();
        let n_frames = corrupted_frames(t, frames);
        let n_joints = corrupted_joints(s);
        if n_joints < 17 {
            prop_assert_eq!(wiped, n_frames);
        }
        for &c in &per_frame {
            prop_assert!(c == 17 || c == n_joints);
        }
        let expected = n_frames * 17 + (frames - n_frames) * n_joints;
        prop_assert_eq!(per_frame.iter().sum::<usize>(), expected);
    }

    #[test]
    fn corruption_is_a_pure_function_of_its_stream(s in 0.0f64..=1.0, t in 0.0f64..=1.0, key in any::<u64>()) {
        let seq = body_sequence(10);
        let spec = CorruptionSpec::new(s, t, CorruptionMode::Noise);
        let a = corrupt_sequence(&seq, &spec, &mut seed::rng(key, &[1]));
        let b = corrupt_sequence(&seq, &spec, &mut seed::rng(key, &[1]));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn heatmap_peak_is_confidence(x in 0usize..12, y in 0usize..12, c in 0.0f64..=1.0, sigma in 0.5f64..3.0) {
        let grid = (12, 12);
        let mut out = vec![0.0f64; 144];
        // Keypoints are normalized; grid-exact positions map to cell indices.
        let k = Keypoint::new(x as f64 / 11.0, y as f64 / 11.0, c);
        render_keypoint(&k, grid, sigma, &mut out);
        let max = out.iter().cloned().fold(0.0, f64::max);
        prop_assert!((out[y * 12 + x] - c).abs() < 1e-9);
        prop_assert!(max <= c + 1e-12);
        prop_assert!(out.iter().all(|v| *v >= 0.0));
    }
}
