//! Contrastive distillation and the three training loops: teacher
//! (per-pathway pretraining, then joint fine-tuning), independent student,
//! and distilled student under scheduled corruption.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt_sequence, scheduled_rates, CorruptionSpec};
use crate::eval::{evaluate, Metrics};
use crate::heads::{classification_loss, cross_entropy, predict, ChainHeads, ChainLogits};
use crate::nn::Linear;
use crate::pose::{augment_dataset, DataError, Dataset, LabelTriple, PoseSequence};
use crate::seed;
use crate::student::Student;
use crate::teacher::Teacher;
use crate::tensor::{OptimizerKind, ParamStore, Real, Tape, Var};
use crate::{Error, Result};

/// Norm floor inside cosine similarity; keeps zero vectors at similarity 0
/// with a finite gradient.
const NORM_EPS: f64 = 1e-8;

/// Cosine similarity of two plain vectors. A zero vector has similarity 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_similarity needs equal lengths");
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        warn!("cosine similarity of a zero vector; returning 0");
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Rows of `x` (`[N, D]`) scaled to unit length.
fn normalize_rows<R: Real>(tape: &mut Tape<R>, x: Var) -> Result<Var> {
    let shape = tape.shape(x)?.to_vec();
    if shape.len() != 2 {
        return Err(Error::Contract(format!("expected [N, D] representations, got {:?}", shape)));
    }
    let data = tape.value(x)?;
    if data.chunks(shape[1]).any(|row| row.iter().all(|v| *v == R::zero())) {
        warn!("zero representation vector in cosine similarity; its similarities are 0");
    }
    // ‖[x, eps]‖ = sqrt(‖x‖² + eps²): smooth at the origin.
    let pad = tape.constant(&[shape[0], 1], vec![R::from_f64_lossy(NORM_EPS); shape[0]])?;
    let padded = tape.concat(&[x, pad], 1)?;
    let norm = tape.l2_norm(padded, 1, true)?;
    Ok(tape.div(x, norm)?)
}

/// Pairwise cosine similarities `[Na, Nb]` between the rows of `a` and `b`.
pub fn cosine_matrix<R: Real>(tape: &mut Tape<R>, a: Var, b: Var) -> Result<Var> {
    let an = normalize_rows(tape, a)?;
    let bn = normalize_rows(tape, b)?;
    let bt = tape.transpose(bn)?;
    Ok(tape.matmul(an, bt)?)
}

/// InfoNCE with teacher rows as anchors and student rows as candidates;
/// row `i` of each batch is the same clip. The softmax denominator covers
/// all `N` student rows, the positive included.
pub fn infonce_loss<R: Real>(tape: &mut Tape<R>, teacher: Var, student: Var, tau: f64, symmetric: bool) -> Result<Var> {
    let n = tape.shape(teacher)?[0];
    if n < 2 {
        return Err(Error::Contract(format!("InfoNCE needs at least 2 pairs, got {}", n)));
    }
    if tape.shape(student)? != tape.shape(teacher)? {
        return Err(Error::Contract("teacher and student batches differ in shape".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {}", tau)));
    }
    let sim = cosine_matrix(tape, teacher, student)?;
    let logits = tape.scale(sim, R::from_f64_lossy(1.0 / tau))?;
    let targets: Vec<usize> = (0..n).collect();
    let forward = cross_entropy(tape, logits, &targets)?;
    if !symmetric {
        return Ok(forward);
    }
    let lt = tape.transpose(logits)?;
    let backward = cross_entropy(tape, lt, &targets)?;
    let s = tape.add(forward, backward)?;
    Ok(tape.scale(s, R::from_f64_lossy(0.5))?)
}

/// Temperature-scaled output matching, `T² · KL(teacher ‖ student)`,
/// averaged over the three tasks. `teacher` holds constant logits.
pub fn soft_label_loss<R: Real>(tape: &mut Tape<R>, teacher: &ChainLogits, student: &ChainLogits, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("soft-label temperature must be positive, got {}", temperature)));
    }
    let inv = R::from_f64_lossy(1.0 / temperature);
    let mut total: Option<Var> = None;
    for (t, s) in teacher.tasks().into_iter().zip(student.tasks()) {
        let b = tape.shape(s)?[0];
        let ts = tape.scale(t, inv)?;
        let ss = tape.scale(s, inv)?;
        let log_pt = tape.log_softmax(ts, 1)?;
        let pt = tape.exp(log_pt)?;
        let log_ps = tape.log_softmax(ss, 1)?;
        let diff = tape.sub(log_pt, log_ps)?;
        let kl = tape.mul(pt, diff)?;
        let kl = tape.sum(kl)?;
        let kl = tape.scale(kl, R::from_f64_lossy(temperature * temperature / b as f64))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, kl)?,
            None => kl,
        });
    }
    Ok(tape.scale(total.expect("three tasks"), R::from_f64_lossy(1.0 / 3.0))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KdLossKind {
    Infonce,
    SoftLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub w_cls: f64,
    pub w_kd: f64,
    /// InfoNCE temperature.
    pub temperature: f64,
    pub loss: KdLossKind,
    /// Average the teacher-anchored and student-anchored InfoNCE terms.
    pub symmetric: bool,
    pub soft_label_temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            w_cls: 0.8,
            w_kd: 0.2,
            temperature: 0.1,
            loss: KdLossKind::Infonce,
            symmetric: false,
            soft_label_temperature: 4.0,
        }
    }
}

impl DistillConfig {
    /// Plain classification training.
    pub fn independent() -> Self {
        DistillConfig { w_cls: 1.0, w_kd: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_cls < 0.0 || self.w_kd < 0.0 || (self.w_cls + self.w_kd - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "loss weights must be non-negative and sum to 1, got w_cls={} w_kd={}",
                self.w_cls, self.w_kd
            )));
        }
        if !(self.temperature > 0.0) || !(self.soft_label_temperature > 0.0) {
            return Err(Error::Config("distillation temperatures must be positive".into()));
        }
        Ok(())
    }
}

/// Teacher outputs for one batch, recorded as tape constants.
#[derive(Clone, Copy, Debug)]
pub struct TeacherBatch {
    pub repr: Var,
    pub logits: ChainLogits,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub cls: Var,
    /// `None` when `w_kd = 0`: the distillation term is not evaluated.
    pub kd: Option<Var>,
}

/// `w_cls · classification + w_kd · distillation`.
pub fn combined_loss<R: Real>(
    tape: &mut Tape<R>,
    logits: &ChainLogits,
    labels: &[LabelTriple],
    teacher: Option<&TeacherBatch>,
    student_repr: Var,
    cfg: &DistillConfig,
) -> Result<LossParts> {
    let cls = classification_loss(tape, logits, labels)?;
    let weighted_cls = if cfg.w_cls == 1.0 { cls } else { tape.scale(cls, R::from_f64_lossy(cfg.w_cls))? };
    if cfg.w_kd == 0.0 {
        return Ok(LossParts { total: weighted_cls, cls, kd: None });
    }
    let teacher = teacher.ok_or_else(|| Error::Contract("w_kd > 0 but no teacher outputs were given".into()))?;
    let kd = match cfg.loss {
        KdLossKind::Infonce => infonce_loss(tape, teacher.repr, student_repr, cfg.temperature, cfg.symmetric)?,
        KdLossKind::SoftLabel => soft_label_loss(tape, &teacher.logits, logits, cfg.soft_label_temperature)?,
    };
    let weighted_kd = tape.scale(kd, R::from_f64_lossy(cfg.w_kd))?;
    let total = tape.add(weighted_cls, weighted_kd)?;
    Ok(LossParts { total, cls, kd: Some(kd) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Patience-based early stopping on a metric that should increase.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: None }
    }

    /// Only a strict improvement resets the counter.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if metric <= best => {}
            _ => {
                self.best = Some((epoch, metric));
                return StopDecision::Improved;
            }
        }
        let (best_epoch, _) = self.best.expect("set above");
        if epoch - best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Wait
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: String,
    pub intent_acc: f64,
    pub attitude_acc: f64,
    pub action_acc: f64,
    pub mean_acc: f64,
    pub cls_loss: f64,
    pub kd_loss: Option<f64>,
    pub s_eff: f64,
    pub t_eff: f64,
}

impl HistoryRow {
    fn from_metrics(epoch: usize, split: impl Into<String>, m: &Metrics, kd_loss: Option<f64>, rates: (f64, f64)) -> Self {
        HistoryRow {
            epoch,
            split: split.into(),
            intent_acc: m.intent.accuracy,
            attitude_acc: m.attitude.accuracy,
            action_acc: m.action.accuracy,
            mean_acc: m.mean_accuracy,
            cls_loss: m.cls_loss,
            kd_loss,
            s_eff: rates.0,
            t_eff: rates.1,
        }
    }
}

/// Epoch-indexed metric history.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

pub const HISTORY_HEADER: &str = "epoch,split,intent_acc,attitude_acc,action_acc,mean_acc,cls_loss,kd_loss,s_eff,t_eff";

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.rows {
            let kd = r.kd_loss.map(|v| format!("{:.6}", v)).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{:.4},{:.4},{:.4},{:.4},{:.6},{},{:.4},{:.4}",
                r.epoch, r.split, r.intent_acc, r.attitude_acc, r.action_acc, r.mean_acc, r.cls_loss, kd, r.s_eff, r.t_eff
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Rows of one split, in epoch order.
    pub fn split<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a HistoryRow> + 'a {
        self.rows.iter().filter(move |r| r.split == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: History,
    /// Epoch whose validation score was kept, if any was tracked.
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    /// Number of epochs actually run.
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherTrainConfig {
    /// Epochs of isolated training per pathway.
    pub pretrain_epochs: usize,
    /// Joint fine-tuning epochs.
    pub epochs: usize,
    pub batch_size: usize,
    /// Gradient-accumulation chunk inside a batch; bounds activation memory.
    pub micro_batch: usize,
    pub early_stop_patience: usize,
    pub optimizer: OptimizerKind,
    pub augment_factor: usize,
    /// Set from the run's global seed, not from the config section.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        TeacherTrainConfig {
            pretrain_epochs: 20,
            epochs: 20,
            batch_size: 96,
            micro_batch: 16,
            early_stop_patience: 5,
            optimizer: OptimizerKind::sgd(0.01, 0.9),
            augment_factor: 20,
            seed: 0,
        }
    }
}

impl TeacherTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.micro_batch == 0 || self.augment_factor == 0 {
            return Err(Error::Config("teacher batch_size must be >= 2; micro_batch and augment_factor >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub optimizer: OptimizerKind,
    pub augment_factor: usize,
    /// The three fields below come from the run's `corruption` and
    /// `distill` sections and its global seed.
    #[serde(skip)]
    pub corruption: CorruptionSpec,
    #[serde(skip)]
    pub distill: DistillConfig,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for StudentTrainConfig {
    fn default() -> Self {
        StudentTrainConfig {
            epochs: 70,
            batch_size: 96,
            early_stop_patience: 5,
            optimizer: OptimizerKind::adam(1e-3),
            augment_factor: 20,
            corruption: CorruptionSpec::default(),
            distill: DistillConfig::default(),
            seed: 0,
        }
    }
}

impl StudentTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2 for InfoNCE negatives, got {}", self.batch_size)));
        }
        if self.augment_factor == 0 {
            return Err(Error::Config("augment_factor must be >= 1".into()));
        }
        self.corruption.validate()?;
        self.distill.validate()
    }
}

fn require_nonempty(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(DataError::Dataset(format!("{} split is empty", ds.split.name())).into());
    }
    Ok(())
}

/// Shuffled batch index lists for one epoch. A trailing batch smaller than
/// two is dropped so every batch has InfoNCE negatives.
fn epoch_batches(n: usize, batch: usize, seed_value: u64, phase: &str, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value, &[seed::hash_str(phase), epoch as u64]));
    order.chunks(batch).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

/// Running train-split statistics of one epoch.
#[derive(Default)]
struct EpochStats {
    labels: Vec<LabelTriple>,
    preds: Vec<[usize; 3]>,
    cls_sum: f64,
    kd_sum: f64,
    batches: usize,
}

impl EpochStats {
    fn add(&mut self, labels: &[LabelTriple], preds: Vec<[usize; 3]>, cls: f64, kd: f64) {
        self.labels.extend_from_slice(labels);
        self.preds.extend(preds);
        self.cls_sum += cls;
        self.kd_sum += kd;
        self.batches += 1;
    }

    fn metrics(&self, num_actions: usize) -> Metrics {
        Metrics::from_predictions(&self.labels, &self.preds, num_actions, self.cls_sum / self.batches.max(1) as f64)
    }

    fn kd_mean(&self) -> f64 {
        self.kd_sum / self.batches.max(1) as f64
    }
}

/// Trains a teacher: each pathway alone behind a temporary linear probe,
/// then all pathways jointly with early stopping on validation mean
/// accuracy. The best joint checkpoint is restored before returning.
pub fn train_teacher(teacher: &mut Teacher<f32>, train: &Dataset, val: &Dataset, cfg: &TeacherTrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    require_nonempty(train)?;
    require_nonempty(val)?;
    let data = augment_dataset(train, cfg.augment_factor, seed::derive(cfg.seed, &[seed::hash_str("teacher-augment")]));
    let k = teacher.num_actions;
    let mut history = History::default();
    let no_rates = (0.0, 0.0);

    for idx in 0..teacher.pathways.len() {
        let modality = teacher.pathways[idx].modality;
        let mut probe_store = ParamStore::<f32>::new();
        let mut rng = seed::rng(cfg.seed, &[seed::hash_str("probe"), idx as u64]);
        let c2 = teacher.config.stage2_channels;
        let probe = Linear::new(&mut probe_store, "probe", c2, teacher.config.repr_dim, true, &mut rng);
        let probe_heads = ChainHeads::new(&mut probe_store, "probe.heads", teacher.config.repr_dim, k, &mut rng);
        let mut opt_teacher = cfg.optimizer.build::<f32>();
        let mut opt_probe = cfg.optimizer.build::<f32>();
        let run = |teacher: &Teacher<f32>,
                   probe_store: &ParamStore<f32>,
                   tape: &mut Tape<f32>,
                   seqs: &[&PoseSequence]|
         -> Result<(crate::tensor::Bound, crate::tensor::Bound, ChainLogits)> {
            let pt = teacher.params.bind(tape);
            let pp = probe_store.bind(tape);
            let (shape, x) = teacher.pathway_input(idx, seqs)?;
            let x = tape.constant(&shape, x)?;
            let pooled = teacher.pathway_forward(tape, &pt, idx, x)?;
            let r = probe.forward(tape, &pp, pooled)?;
            let logits = probe_heads.forward(tape, &pp, r)?;
            Ok((pt, pp, logits))
        };
        let phase = format!("pretrain-{}", modality.name());
        for epoch in 0..cfg.pretrain_epochs {
            let mut stats = EpochStats::default();
            for batch in epoch_batches(data.len(), cfg.batch_size, cfg.seed, &phase, epoch) {
                for micro in batch.chunks(cfg.micro_batch) {
                    let seqs: Vec<&PoseSequence> = micro.iter().map(|&i| &data.samples[i].seq).collect();
                    let labels: Vec<LabelTriple> = micro.iter().map(|&i| data.samples[i].label).collect();
                    let mut tape = Tape::new();
                    let (pt, pp, logits) = run(teacher, &probe_store, &mut tape, &seqs)?;
                    let loss = classification_loss(&mut tape, &logits, &labels)?;
                    let scaled = tape.scale(loss, micro.len() as f32 / batch.len() as f32)?;
                    let preds = predict(&tape, &logits)?;
                    let value = tape.value(loss)?[0] as f64;
                    let grads = tape.backward(scaled)?;
                    teacher.params.accumulate(&pt, &grads)?;
                    probe_store.accumulate(&pp, &grads)?;
                    stats.add(&labels, preds, value * micro.len() as f64 / batch.len() as f64, 0.0);
                    stats.batches -= 1;
                }
                stats.batches += 1;
                opt_teacher.step(&mut teacher.params)?;
                opt_probe.step(&mut probe_store)?;
            }
            let train_m = stats.metrics(k);
            history.rows.push(HistoryRow::from_metrics(epoch, format!("{}:train", modality.name()), &train_m, None, no_rates));
            let mut val_labels = Vec::with_capacity(val.len());
            let mut val_preds = Vec::with_capacity(val.len());
            let mut val_loss = 0.0;
            for chunk in val.samples.chunks(crate::eval::EVAL_BATCH) {
                let seqs: Vec<&PoseSequence> = chunk.iter().map(|s| &s.seq).collect();
                let labels: Vec<LabelTriple> = chunk.iter().map(|s| s.label).collect();
                let mut tape = Tape::new();
                let (_, _, logits) = run(teacher, &probe_store, &mut tape, &seqs)?;
                let loss = classification_loss(&mut tape, &logits, &labels)?;
                val_loss += tape.value(loss)?[0] as f64 * chunk.len() as f64;
                val_preds.extend(predict(&tape, &logits)?);
                val_labels.extend(labels);
            }
            let val_m = Metrics::from_predictions(&val_labels, &val_preds, k, val_loss / val.len() as f64);
            info!("teacher pretrain {} epoch {}: val mean acc {:.2}", modality.name(), epoch, val_m.mean_accuracy);
            history.rows.push(HistoryRow::from_metrics(epoch, format!("{}:val", modality.name()), &val_m, None, no_rates));
        }
    }

    let mut opt = cfg.optimizer.build::<f32>();
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best_params = teacher.params.clone();
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let mut stats = EpochStats::default();
        for batch in epoch_batches(data.len(), cfg.batch_size, cfg.seed, "teacher-joint", epoch) {
            let mut batch_loss = 0.0;
            for micro in batch.chunks(cfg.micro_batch) {
                let seqs: Vec<&PoseSequence> = micro.iter().map(|&i| &data.samples[i].seq).collect();
                let labels: Vec<LabelTriple> = micro.iter().map(|&i| data.samples[i].label).collect();
                let mut tape = Tape::new();
                let p = teacher.params.bind(&mut tape);
                let inputs = teacher.input_vars(&mut tape, &seqs)?;
                let (_, logits) = teacher.forward_full(&mut tape, &p, &inputs)?;
                let loss = classification_loss(&mut tape, &logits, &labels)?;
                let w = micro.len() as f64 / batch.len() as f64;
                let scaled = tape.scale(loss, w as f32)?;
                batch_loss += tape.value(loss)?[0] as f64 * w;
                stats.labels.extend_from_slice(&labels);
                stats.preds.extend(predict(&tape, &logits)?);
                let grads = tape.backward(scaled)?;
                teacher.params.accumulate(&p, &grads)?;
            }
            stats.cls_sum += batch_loss;
            stats.batches += 1;
            opt.step(&mut teacher.params)?;
        }
        history.rows.push(HistoryRow::from_metrics(epoch, "train", &stats.metrics(k), None, no_rates));
        let val_m = evaluate(&*teacher, val, None)?;
        info!("teacher joint epoch {}: val mean acc {:.2}", epoch, val_m.mean_accuracy);
        history.rows.push(HistoryRow::from_metrics(epoch, "val", &val_m, None, no_rates));
        match stopper.observe(epoch, val_m.mean_accuracy) {
            StopDecision::Improved => best_params = teacher.params.clone(),
            StopDecision::Wait => {}
            StopDecision::Stop => break,
        }
    }
    if stopper.best().is_some() {
        teacher.params = best_params;
    }
    let best = stopper.best();
    Ok(TrainOutcome { history, best_epoch: best.map(|b| b.0), best_val: best.map(|b| b.1), epochs_run })
}

/// Frozen teacher outputs on clean sequences, keyed by sequence id.
#[derive(Clone, Debug, Default)]
pub struct TeacherTargets {
    repr_dim: usize,
    num_actions: usize,
    index: HashMap<String, usize>,
    repr: Vec<f32>,
    logits: Vec<f32>,
}

impl TeacherTargets {
    /// Runs the teacher once over every sequence of `ds`.
    pub fn compute(teacher: &Teacher<f32>, ds: &Dataset) -> Result<Self> {
        let repr_dim = teacher.config.repr_dim;
        let num_actions = teacher.num_actions;
        let width = 3 + 2 + num_actions;
        let mut out = TeacherTargets {
            repr_dim,
            num_actions,
            index: HashMap::with_capacity(ds.len()),
            repr: Vec::with_capacity(ds.len() * repr_dim),
            logits: Vec::with_capacity(ds.len() * width),
        };
        for chunk in ds.samples.chunks(32) {
            let seqs: Vec<&PoseSequence> = chunk.iter().map(|s| &s.seq).collect();
            let mut tape = Tape::new();
            let p = teacher.params.bind(&mut tape);
            let inputs = teacher.input_vars(&mut tape, &seqs)?;
            let (r, logits) = teacher.forward_full(&mut tape, &p, &inputs)?;
            out.repr.extend_from_slice(tape.value(r)?);
            let parts: Vec<&[f32]> = logits.tasks().iter().map(|&v| tape.value(v)).collect::<std::result::Result<_, _>>()?;
            for b in 0..chunk.len() {
                for (part, cols) in parts.iter().zip([3, 2, num_actions]) {
                    out.logits.extend_from_slice(&part[b * cols..(b + 1) * cols]);
                }
            }
            for s in chunk {
                out.index.insert(s.seq.id.clone(), out.index.len());
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Representation of one sequence.
    pub fn repr(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| &self.repr[i * self.repr_dim..(i + 1) * self.repr_dim])
    }

    fn batch(&self, tape: &mut Tape<f32>, ids: &[&str]) -> Result<TeacherBatch> {
        let width = 5 + self.num_actions;
        let mut repr = Vec::with_capacity(ids.len() * self.repr_dim);
        let mut parts = [Vec::new(), Vec::new(), Vec::new()];
        for id in ids {
            let i = *self.index.get(*id).ok_or_else(|| Error::Contract(format!("no teacher target for sequence {}", id)))?;
            repr.extend_from_slice(&self.repr[i * self.repr_dim..(i + 1) * self.repr_dim]);
            let row = &self.logits[i * width..(i + 1) * width];
            parts[0].extend_from_slice(&row[..3]);
            parts[1].extend_from_slice(&row[3..5]);
            parts[2].extend_from_slice(&row[5..]);
        }
        let b = ids.len();
        let [p0, p1, p2] = parts;
        Ok(TeacherBatch {
            repr: tape.constant(&[b, self.repr_dim], repr)?,
            logits: ChainLogits {
                intent: tape.constant(&[b, 3], p0)?,
                attitude: tape.constant(&[b, 2], p1)?,
                action: tape.constant(&[b, self.num_actions], p2)?,
            },
        })
    }
}

/// Called after every student epoch with the epoch index and current model.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &Student<f32>);

/// Independent student training: classification loss only, same corruption
/// schedule and early-stopping rule as distillation.
pub fn train_student(student: &mut Student<f32>, train: &Dataset, val: &Dataset, cfg: &StudentTrainConfig) -> Result<TrainOutcome> {
    let cfg = StudentTrainConfig { distill: DistillConfig { w_cls: 1.0, w_kd: 0.0, ..cfg.distill.clone() }, ..cfg.clone() };
    let data = augmented_train(train, &cfg);
    fit_student(student, &data, val, None, &cfg, None)
}

/// Distilled student training against a frozen teacher. With `w_kd = 0`
/// the teacher is never run and the result equals [`train_student`].
pub fn distill_student(
    student: &mut Student<f32>,
    teacher: &Teacher<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &StudentTrainConfig,
) -> Result<TrainOutcome> {
    let data = augmented_train(train, cfg);
    if cfg.distill.w_kd == 0.0 {
        return fit_student(student, &data, val, None, cfg, None);
    }
    let targets = TeacherTargets::compute(teacher, &data)?;
    fit_student(student, &data, val, Some(&targets), cfg, None)
}

/// The training set a student sees for `cfg`.
pub fn augmented_train(train: &Dataset, cfg: &StudentTrainConfig) -> Dataset {
    augment_dataset(train, cfg.augment_factor, seed::derive(cfg.seed, &[seed::hash_str("student-augment")]))
}

/// Student loop over an already-augmented training set. Each batch corrupts
/// the student's input at the scheduled rates; teacher targets come from
/// the clean sequences. Early stopping and best-checkpoint tracking start
/// once warm-up is over.
pub fn fit_student(
    student: &mut Student<f32>,
    data: &Dataset,
    val: &Dataset,
    targets: Option<&TeacherTargets>,
    cfg: &StudentTrainConfig,
    mut hook: Option<EpochHook<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    require_nonempty(data)?;
    require_nonempty(val)?;
    let k = student.num_actions;
    let mut opt = cfg.optimizer.build::<f32>();
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best_params: Option<ParamStore<f32>> = None;
    let mut history = History::default();
    let mut epochs_run = 0;
    let corruption_key = seed::hash_str("train-corruption");
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let (s_eff, t_eff) = scheduled_rates(&cfg.corruption, epoch);
        let spec = cfg.corruption.with_rates(s_eff, t_eff);
        let mut stats = EpochStats::default();
        for batch in epoch_batches(data.len(), cfg.batch_size, cfg.seed, "student", epoch) {
            let seqs: Vec<PoseSequence> = batch
                .iter()
                .map(|&i| {
                    let clean = &data.samples[i].seq;
                    if spec.is_identity() {
                        clean.clone()
                    } else {
                        let mut rng = seed::rng(spec.seed, &[corruption_key, epoch as u64, i as u64]);
                        corrupt_sequence(clean, &spec, &mut rng)
                    }
                })
                .collect();
            let refs: Vec<&PoseSequence> = seqs.iter().collect();
            let labels: Vec<LabelTriple> = batch.iter().map(|&i| data.samples[i].label).collect();
            let mut tape = Tape::new();
            let p = student.params.bind(&mut tape);
            let (shape, x) = Student::<f32>::batch_input(&refs);
            let x = tape.constant(&shape, x)?;
            let (r, logits) = student.forward_full(&mut tape, &p, x)?;
            let teacher_batch = match (targets, cfg.distill.w_kd > 0.0) {
                (Some(t), true) => {
                    let ids: Vec<&str> = batch.iter().map(|&i| data.samples[i].seq.id.as_str()).collect();
                    Some(t.batch(&mut tape, &ids)?)
                }
                _ => None,
            };
            let parts = combined_loss(&mut tape, &logits, &labels, teacher_batch.as_ref(), r, &cfg.distill)?;
            let cls = tape.value(parts.cls)?[0] as f64;
            let kd = parts.kd.map(|v| tape.value(v).map(|x| x[0] as f64)).transpose()?.unwrap_or(0.0);
            let preds = predict(&tape, &logits)?;
            let grads = tape.backward(parts.total)?;
            student.params.accumulate(&p, &grads)?;
            opt.step(&mut student.params)?;
            stats.add(&labels, preds, cls, kd);
        }
        history.rows.push(HistoryRow::from_metrics(epoch, "train", &stats.metrics(k), Some(stats.kd_mean()), (s_eff, t_eff)));
        let val_m = evaluate(&*student, val, Some(&spec))?;
        info!("student epoch {}: rates ({:.2}, {:.2}) val mean acc {:.2}", epoch, s_eff, t_eff, val_m.mean_accuracy);
        history.rows.push(HistoryRow::from_metrics(epoch, "val", &val_m, None, (s_eff, t_eff)));
        if let Some(h) = hook.as_mut() {
            h(epoch, student);
        }
        if epoch >= cfg.corruption.warmup_epochs {
            match stopper.observe(epoch, val_m.mean_accuracy) {
                StopDecision::Improved => best_params = Some(student.params.clone()),
                StopDecision::Wait => {}
                StopDecision::Stop => break,
            }
        }
    }
    if let Some(best) = best_params {
        student.params = best;
    }
    let best = stopper.best();
    Ok(TrainOutcome { history, best_epoch: best.map(|b| b.0), best_val: best.map(|b| b.1), epochs_run })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(teacher: &[f64], student: &[f64], n: usize, tau: f64) -> f64 {
        let d = teacher.len() / n;
        let mut tape = Tape::<f64>::new();
        let t = tape.constant(&[n, d], teacher.to_vec()).unwrap();
        let s = tape.constant(&[n, d], student.to_vec()).unwrap();
        let l = infonce_loss(&mut tape, t, s, tau, false).unwrap();
        tape.value(l).unwrap()[0]
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[-1.0, -2.0]) + 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn identical_batch_is_ln_n() {
        let v: Vec<f64> = (0..4).flat_map(|_| [0.3, -0.2, 0.5]).collect();
        assert!((loss_of(&v, &v, 4, 0.1) - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_alignment() {
        let v = [1.0, 0.0, 0.0, 1.0];
        let expected = -(10f64.exp() / (10f64.exp() + 1.0)).ln();
        assert!((loss_of(&v, &v, 2, 0.1) - expected).abs() < 1e-12);
    }

    #[test]
    fn single_pair_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let t = tape.constant(&[1, 2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(infonce_loss(&mut tape, t, t, 0.1, false), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_vector_has_zero_similarity() {
        let mut tape = Tape::<f64>::new();
        let a = tape.variable(&[2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let m = cosine_matrix(&mut tape, a, a).unwrap();
        assert_eq!(tape.value(m).unwrap()[0], 0.0);
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(a).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn stopper_patience() {
        let mut s = EarlyStopper::new(5);
        let metric = |e: usize| if e <= 7 { e as f64 } else { 7.0 - (e - 7) as f64 };
        let stop = (0..100).find(|&e| s.observe(e, metric(e)) == StopDecision::Stop);
        assert_eq!(stop, Some(12));
        assert_eq!(s.best(), Some((7, 7.0)));
    }

    #[test]
    fn ties_do_not_reset_patience() {
        let mut s = EarlyStopper::new(2);
        assert_eq!(s.observe(0, 1.0), StopDecision::Improved);
        assert_eq!(s.observe(1, 1.0), StopDecision::Wait);
        assert_eq!(s.observe(2, 1.0), StopDecision::Stop);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(DistillConfig { w_cls: 0.5, ..Default::default() }.validate().is_err());
        assert!(DistillConfig::default().validate().is_ok());
        assert!(DistillConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn history_csv_header_and_blank_kd() {
        let h = History {
            rows: vec![HistoryRow {
                epoch: 0,
                split: "val".into(),
                intent_acc: 50.0,
                attitude_acc: 50.0,
                action_acc: 10.0,
                mean_acc: 36.6667,
                cls_loss: 1.0,
                kd_loss: None,
                s_eff: 0.0,
                t_eff: 0.0,
            }],
        };
        let csv = h.to_csv();
        assert!(csv.starts_with(HISTORY_HEADER));
        assert!(csv.lines().nth(1).unwrap().contains("1.000000,,0.0000"));
    }
}
