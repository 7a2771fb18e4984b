//! Accuracy / macro-F1 evaluation, corruption sweeps and latency benchmarks.

use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt_sequence, CorruptionMode, CorruptionSpec};
use crate::heads::{classification_loss, predict, ATTITUDE_CLASSES, INTENT_CLASSES};
use crate::pose::{Dataset, LabelTriple, PoseSequence, Taxonomy};
use crate::seed;
use crate::student::Student;
use crate::teacher::Teacher;
use crate::tensor::{Real, Tape};
use crate::{Error, Result};

/// A model that maps pose sequences to chained predictions.
pub trait Classifier {
    fn num_actions(&self) -> usize;

    fn count_params(&self) -> usize;

    /// Predictions per sequence and the batch's mean classification loss.
    fn predict_batch(&self, seqs: &[&PoseSequence], labels: &[LabelTriple]) -> Result<(Vec<[usize; 3]>, f64)>;
}

impl<R: Real> Classifier for Student<R> {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn count_params(&self) -> usize {
        self.params.numel()
    }

    fn predict_batch(&self, seqs: &[&PoseSequence], labels: &[LabelTriple]) -> Result<(Vec<[usize; 3]>, f64)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let (shape, data) = Student::<R>::batch_input(seqs);
        let x = tape.constant(&shape, data)?;
        let (_, logits) = self.forward_full(&mut tape, &p, x)?;
        let loss = classification_loss(&mut tape, &logits, labels)?;
        Ok((predict(&tape, &logits)?, tape.value(loss)?[0].to_f64_lossy()))
    }
}

impl<R: Real> Classifier for Teacher<R> {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn count_params(&self) -> usize {
        self.params.numel()
    }

    fn predict_batch(&self, seqs: &[&PoseSequence], labels: &[LabelTriple]) -> Result<(Vec<[usize; 3]>, f64)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let inputs = self.input_vars(&mut tape, seqs)?;
        let (_, logits) = self.forward_full(&mut tape, &p, &inputs)?;
        let loss = classification_loss(&mut tape, &logits, labels)?;
        Ok((predict(&tape, &logits)?, tape.value(loss)?[0].to_f64_lossy()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    /// Percent correct.
    pub accuracy: f64,
    /// Unweighted mean of per-class F1, in percent.
    pub macro_f1: f64,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy, macro-F1 and confusion matrix of one task.
pub fn task_metrics(truth: &[usize], pred: &[usize], classes: usize) -> TaskMetrics {
    assert_eq!(truth.len(), pred.len(), "truth and prediction lengths differ");
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let accuracy = if truth.is_empty() { 0.0 } else { 100.0 * correct as f64 / truth.len() as f64 };
    let mut f1_sum = 0.0;
    for c in 0..classes {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..classes).map(|r| confusion[r][c]).sum();
        if support == 0 {
            warn!("class {} has no support; its F1 counts as 0", c);
            continue;
        }
        if tp > 0.0 {
            let precision = tp / predicted as f64;
            let recall = tp / support as f64;
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    let macro_f1 = if classes == 0 { 0.0 } else { 100.0 * f1_sum / classes as f64 };
    TaskMetrics { accuracy, macro_f1, confusion }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub intent: TaskMetrics,
    pub attitude: TaskMetrics,
    pub action: TaskMetrics,
    /// Mean of the three task accuracies.
    pub mean_accuracy: f64,
    pub cls_loss: f64,
    pub samples: usize,
}

impl Metrics {
    pub fn from_predictions(labels: &[LabelTriple], preds: &[[usize; 3]], num_actions: usize, cls_loss: f64) -> Self {
        let mut tasks = Vec::with_capacity(3);
        for (task, classes) in [INTENT_CLASSES, ATTITUDE_CLASSES, num_actions].into_iter().enumerate() {
            let truth: Vec<usize> = labels.iter().map(|l| l.indices()[task]).collect();
            let pred: Vec<usize> = preds.iter().map(|p| p[task]).collect();
            tasks.push(task_metrics(&truth, &pred, classes));
        }
        let action = tasks.pop().unwrap();
        let attitude = tasks.pop().unwrap();
        let intent = tasks.pop().unwrap();
        let mean_accuracy = (intent.accuracy + attitude.accuracy + action.accuracy) / 3.0;
        Metrics { intent, attitude, action, mean_accuracy, cls_loss, samples: labels.len() }
    }

    pub fn tasks(&self) -> [(&'static str, &TaskMetrics); 3] {
        [("intent", &self.intent), ("attitude", &self.attitude), ("action", &self.action)]
    }
}

/// Corruption applied to sequence `index` of an evaluation set. The stream
/// depends only on `(spec.seed, index)`, so every model and every command
/// sees the same pattern.
pub fn eval_corruption(seq: &PoseSequence, spec: &CorruptionSpec, index: usize) -> PoseSequence {
    if spec.is_identity() {
        return seq.clone();
    }
    let mut rng = seed::rng(spec.seed, &[seed::hash_str("eval-corruption"), index as u64]);
    corrupt_sequence(seq, spec, &mut rng)
}

pub const EVAL_BATCH: usize = 128;

/// Scores `model` on `ds`, optionally corrupting each sequence first.
pub fn evaluate<M: Classifier + ?Sized>(model: &M, ds: &Dataset, corruption: Option<&CorruptionSpec>) -> Result<Metrics> {
    if model.num_actions() != ds.taxonomy.num_actions() {
        return Err(Error::Config(format!(
            "model predicts {} actions but the {} dataset has {}",
            model.num_actions(),
            ds.taxonomy,
            ds.taxonomy.num_actions()
        )));
    }
    if ds.is_empty() {
        return Err(crate::pose::DataError::Dataset(format!("{} split is empty", ds.split.name())).into());
    }
    let mut preds = Vec::with_capacity(ds.len());
    let mut loss_sum = 0.0;
    let labels: Vec<LabelTriple> = ds.samples.iter().map(|s| s.label).collect();
    for (chunk_idx, chunk) in ds.samples.chunks(EVAL_BATCH).enumerate() {
        let seqs: Vec<PoseSequence> = chunk
            .iter()
            .enumerate()
            .map(|(i, s)| match corruption {
                Some(spec) => eval_corruption(&s.seq, spec, chunk_idx * EVAL_BATCH + i),
                None => s.seq.clone(),
            })
            .collect();
        let refs: Vec<&PoseSequence> = seqs.iter().collect();
        let (p, loss) = model.predict_batch(&refs, &labels[chunk_idx * EVAL_BATCH..chunk_idx * EVAL_BATCH + chunk.len()])?;
        loss_sum += loss * chunk.len() as f64;
        preds.extend(p);
    }
    Ok(Metrics::from_predictions(&labels, &preds, ds.taxonomy.num_actions(), loss_sum / ds.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub spatial: Vec<f64>,
    pub temporal: Vec<f64>,
    pub modes: Vec<CorruptionMode>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid { spatial: vec![0.0, 0.1, 0.2, 0.3], temporal: vec![0.0, 0.1, 0.2, 0.3], modes: vec![CorruptionMode::Zero] }
    }
}

impl SweepGrid {
    pub fn points(&self) -> Vec<(f64, f64, CorruptionMode)> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &s in &self.spatial {
                for &t in &self.temporal {
                    out.push((s, t, mode));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub spatial: f64,
    pub temporal: f64,
    pub mode: CorruptionMode,
    pub model: String,
    pub task: String,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub spatial: f64,
    pub temporal: f64,
    pub mode: CorruptionMode,
    pub task: String,
    pub independent: f64,
    pub distilled: f64,
    /// Distilled minus independent accuracy.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub deltas: Vec<DeltaRow>,
}

/// Evaluates both students on every grid point. Tasks are intent,
/// attitude, action and their mean.
pub fn corruption_sweep<M: Classifier + ?Sized>(
    independent: &M,
    distilled: &M,
    ds: &Dataset,
    grid: &SweepGrid,
    seed_value: u64,
) -> Result<SweepReport> {
    let mut rows = Vec::new();
    let mut deltas = Vec::new();
    for (s, t, mode) in grid.points() {
        let spec = CorruptionSpec { seed: seed_value, ..CorruptionSpec::new(s, t, mode) };
        spec.validate()?;
        let mi = evaluate(independent, ds, Some(&spec))?;
        let md = evaluate(distilled, ds, Some(&spec))?;
        for (name, metrics) in [("independent", &mi), ("distilled", &md)] {
            for (task, m) in metrics.tasks() {
                rows.push(SweepRow {
                    spatial: s,
                    temporal: t,
                    mode,
                    model: name.into(),
                    task: task.into(),
                    accuracy: m.accuracy,
                    macro_f1: m.macro_f1,
                });
            }
        }
        let pairs = mi.tasks().into_iter().zip(md.tasks()).map(|((task, a), (_, b))| (task, a.accuracy, b.accuracy));
        for (task, a, b) in pairs.chain(std::iter::once(("mean", mi.mean_accuracy, md.mean_accuracy))) {
            deltas.push(DeltaRow { spatial: s, temporal: t, mode, task: task.into(), independent: a, distilled: b, delta: b - a });
        }
    }
    Ok(SweepReport { rows, deltas })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub params: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub iters: usize,
}

/// Wall-clock latency of single-sequence inference, warm-up excluded.
/// Runs on the calling thread only.
pub fn benchmark<M: Classifier + ?Sized>(model: &M, seq: &PoseSequence, n_warmup: usize, n_iters: usize) -> Result<BenchResult> {
    if n_iters < 30 {
        return Err(Error::Config(format!("benchmark needs at least 30 iterations, got {}", n_iters)));
    }
    // The label only feeds the loss; any valid triple works.
    let label = LabelTriple::from_action(Taxonomy::Jpl, 0)?;
    let run = || model.predict_batch(&[seq], &[label]);
    for _ in 0..n_warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(n_iters);
    for _ in 0..n_iters {
        let start = Instant::now();
        std::hint::black_box(run()?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let quantile = |q: f64| times[((times.len() - 1) as f64 * q).round() as usize];
    Ok(BenchResult { params: model.count_params(), median_ms: quantile(0.5), p95_ms: quantile(0.95), iters: n_iters })
}
