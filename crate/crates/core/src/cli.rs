//! Command-line front end. Each subcommand resolves a [`RunConfig`], runs
//! one pipeline stage and writes its artifacts into a fresh run directory
//! `<out>/<timestamp>-<fingerprint>/`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::config::RunConfig;
use crate::corruption::{CorruptionMode, CorruptionSpec};
use crate::distill::{distill_student, train_student, train_teacher, History, TrainOutcome};
use crate::eval::{benchmark, corruption_sweep, evaluate, BenchResult, Classifier, Metrics, SweepReport};
use crate::pose::{
    check_disjoint, generate_synthetic, load_jsonl, split_dataset, write_jsonl, Dataset, LoadOptions, Split,
    SyntheticConfig, Taxonomy,
};
use crate::student::Student;
use crate::teacher::Teacher;
use crate::{Error, Result};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "socialkd", version, about = "Pose-only social action recognition with multimodal distillation")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "SOCIALKD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true, env = "SOCIALKD_SEED")]
    pub seed: Option<u64>,
    /// Root directory for run outputs.
    #[arg(long, global = true, env = "SOCIALKD_OUT", default_value = "runs")]
    pub out: PathBuf,
    /// Reject unknown JSONL keys and missing teacher modalities.
    #[arg(long, global = true, env = "SOCIALKD_STRICT")]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset as train/val/test JSONL.
    GenData(GenDataArgs),
    /// Train the multimodal teacher.
    TrainTeacher,
    /// Train the pose-only student without distillation.
    TrainStudent,
    /// Train the student against a frozen teacher checkpoint.
    Distill(DistillArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Evaluate two students over a grid of corruption rates.
    Sweep(SweepArgs),
    /// Measure parameters and single-sequence latency.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Action taxonomy; overrides `data.taxonomy`.
    #[arg(long)]
    pub taxonomy: Option<Taxonomy>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Teacher checkpoint produced by `train-teacher`.
    #[arg(long)]
    pub teacher: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Student or teacher checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test-time corruption, e.g. `s=0.3,t=0.3` or `s=0.2,t=0,mode=noise`.
    #[arg(long)]
    pub corruption: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub independent: PathBuf,
    #[arg(long)]
    pub distilled: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Student checkpoint; a freshly initialized student when absent.
    #[arg(long)]
    pub student: Option<PathBuf>,
    /// Teacher checkpoint; a freshly initialized teacher when absent.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Taxonomy(_) | Error::Modality(_) => EXIT_CONFIG,
        Error::Data(_) | Error::DegenerateGaze(_) => EXIT_DATA,
        Error::Io { .. } => EXIT_IO,
        Error::Tensor(_) | Error::Checkpoint(_) | Error::Contract(_) => EXIT_RUNTIME,
    }
}

/// Parses `s=<rate>,t=<rate>[,mode=<mode>]`.
pub fn parse_corruption(text: &str) -> Result<(f64, f64, Option<CorruptionMode>)> {
    let bad = || Error::Config(format!("corruption must look like s=0.3,t=0.3[,mode=zero], got {:?}", text));
    let (mut s, mut t, mut mode) = (None, None, None);
    for part in text.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(bad)?;
        match key.trim() {
            "s" => s = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
            "t" => t = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
            "mode" => {
                let v = toml::Value::String(value.trim().to_string());
                mode = Some(v.try_into().map_err(|_| bad())?);
            }
            _ => return Err(bad()),
        }
    }
    Ok((s.ok_or_else(bad)?, t.ok_or_else(bad)?, mode))
}

/// Parses the process arguments and environment, runs the command and
/// returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOCIALKD_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli, std::env::vars()) {
        Ok(dir) => {
            println!("outputs written to {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code(&e)
        }
    }
}

/// Runs one command; returns the run directory.
pub fn run(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<PathBuf> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), env, cli.seed)?;
    if let Command::GenData(GenDataArgs { taxonomy: Some(t) }) = &cli.command {
        cfg.data.taxonomy = *t;
    }
    if cli.strict {
        cfg.teacher.model.lenient = false;
    }
    if let Command::Distill(a) = &cli.command {
        if !a.teacher.exists() {
            return Err(Error::Config(format!("teacher checkpoint {} does not exist", a.teacher.display())));
        }
    }
    let dir = run_dir(&cli.out, &cfg)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    match &cli.command {
        Command::GenData(_) => gen_data(&cfg, &dir)?,
        Command::TrainTeacher => cmd_train_teacher(&cfg, cli.strict, &dir)?,
        Command::TrainStudent => cmd_train_student(&cfg, cli.strict, &dir, None)?,
        Command::Distill(a) => {
            let teacher = Checkpoint::load(&a.teacher)?.to_teacher::<f32>()?;
            cmd_train_student(&cfg, cli.strict, &dir, Some(&teacher))?
        }
        Command::Eval(a) => cmd_eval(&mut cfg, cli.strict, &dir, a)?,
        Command::Sweep(a) => cmd_sweep(&cfg, cli.strict, &dir, a)?,
        Command::Bench(a) => cmd_bench(&cfg, cli.strict, &dir, a)?,
    }
    Ok(dir)
}

/// Creates `<out>/<timestamp>-<fingerprint>`, suffixing a counter if a run
/// with the same name already exists.
fn run_dir(out: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
    let base = format!("{}-{}", stamp, cfg.fingerprint());
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{}-{}", base, n) };
        let dir = out.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(dir, e)),
        }
    }
    unreachable!()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_text(path, &text)
}

fn synthetic_splits(cfg: &RunConfig) -> Result<[Dataset; 3]> {
    let d = &cfg.data;
    let synth = SyntheticConfig { noise_std: d.noise_std, ..SyntheticConfig::new(d.taxonomy, d.n_per_class, cfg.seed) };
    split_dataset(&generate_synthetic(&synth)?, d.split, cfg.seed)
}

/// Train/val/test from `data.dir` when set, else the synthetic generator.
pub fn load_splits(cfg: &RunConfig, strict: bool) -> Result<[Dataset; 3]> {
    let Some(dir) = &cfg.data.dir else {
        return synthetic_splits(cfg);
    };
    let load = |split: Split| {
        let opts = LoadOptions { pad_policy: cfg.data.pad_policy, strict, ..LoadOptions::new(cfg.data.taxonomy, split) };
        load_jsonl(dir.join(format!("{}.jsonl", split.name())), &opts)
    };
    let splits = [load(Split::Train)?, load(Split::Val)?, load(Split::Test)?];
    check_disjoint(&[&splits[0], &splits[1], &splits[2]])?;
    Ok(splits)
}

fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let splits = synthetic_splits(cfg)?;
    for ds in &splits {
        let path = dir.join(format!("{}.jsonl", ds.split.name()));
        write_jsonl(ds, &path)?;
        println!("{:<5} {:>5} sequences, per class {:?}", ds.split.name(), ds.len(), ds.class_counts());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    model: ModelKind,
    params: usize,
    epochs_run: usize,
    best_epoch: Option<usize>,
    best_val_mean_accuracy: Option<f64>,
    test_clean: &'a Metrics,
    /// Test metrics at the training corruption's target rates.
    test_corrupted: Option<&'a Metrics>,
}

fn report_outcome(outcome: &TrainOutcome, max_epochs: usize) {
    if outcome.epochs_run < max_epochs {
        println!(
            "early stopping at epoch {} (best validation epoch {})",
            outcome.epochs_run - 1,
            outcome.best_epoch.map_or("none".into(), |e| e.to_string())
        );
    } else {
        println!("finished {} epochs", outcome.epochs_run);
    }
}

fn write_training(dir: &Path, ck: &Checkpoint, history: &History) -> Result<()> {
    ck.save(&dir.join("checkpoint.json"))?;
    history.write_csv(&dir.join("history.csv"))
}

fn cmd_train_teacher(cfg: &RunConfig, strict: bool, dir: &Path) -> Result<()> {
    let [train, val, test] = load_splits(cfg, strict)?;
    let tcfg = cfg.teacher_train();
    let mut teacher = Teacher::<f32>::new(cfg.teacher.model.clone(), cfg.data.taxonomy.num_actions(), cfg.seed)?;
    info!("teacher: {} parameters, {} training sequences", teacher.count_params(), train.len());
    let outcome = train_teacher(&mut teacher, &train, &val, &tcfg)?;
    report_outcome(&outcome, tcfg.epochs);
    let test_clean = evaluate(&teacher, &test, None)?;
    write_training(dir, &Checkpoint::from_teacher(&teacher), &outcome.history)?;
    write_json(
        &dir.join("report.json"),
        &TrainReport {
            model: ModelKind::Teacher,
            params: teacher.count_params(),
            epochs_run: outcome.epochs_run,
            best_epoch: outcome.best_epoch,
            best_val_mean_accuracy: outcome.best_val,
            test_clean: &test_clean,
            test_corrupted: None,
        },
    )?;
    println!("teacher test mean accuracy {:.2}", test_clean.mean_accuracy);
    Ok(())
}

fn cmd_train_student(cfg: &RunConfig, strict: bool, dir: &Path, teacher: Option<&Teacher<f32>>) -> Result<()> {
    let [train, val, test] = load_splits(cfg, strict)?;
    let scfg = cfg.student_train();
    let mut student = Student::<f32>::new(cfg.student.model.clone(), cfg.data.taxonomy.num_actions(), cfg.seed)?;
    info!("student: {} parameters, {} training sequences", student.count_params(), train.len());
    let outcome = match teacher {
        Some(t) => {
            if t.num_actions != student.num_actions {
                return Err(Error::Config(format!(
                    "teacher has {} action classes, the configured taxonomy has {}",
                    t.num_actions, student.num_actions
                )));
            }
            distill_student(&mut student, t, &train, &val, &scfg)?
        }
        None => train_student(&mut student, &train, &val, &scfg)?,
    };
    report_outcome(&outcome, scfg.epochs);
    let test_clean = evaluate(&student, &test, None)?;
    let target = cfg.training_corruption();
    let test_corrupted = evaluate(&student, &test, Some(&target))?;
    write_training(dir, &Checkpoint::from_student(&student), &outcome.history)?;
    write_json(
        &dir.join("report.json"),
        &TrainReport {
            model: ModelKind::Student,
            params: student.count_params(),
            epochs_run: outcome.epochs_run,
            best_epoch: outcome.best_epoch,
            best_val_mean_accuracy: outcome.best_val,
            test_clean: &test_clean,
            test_corrupted: Some(&test_corrupted),
        },
    )?;
    println!(
        "student test mean accuracy {:.2} clean, {:.2} at s={} t={}",
        test_clean.mean_accuracy, test_corrupted.mean_accuracy, target.spatial_rate, target.temporal_rate
    );
    Ok(())
}

fn load_classifier(path: &Path) -> Result<Box<dyn Classifier>> {
    let ck = Checkpoint::load(path)?;
    Ok(match ck.kind {
        ModelKind::Student => Box::new(ck.to_student::<f32>()?),
        ModelKind::Teacher => Box::new(ck.to_teacher::<f32>()?),
    })
}

#[derive(Serialize)]
struct EvalReport<'a> {
    checkpoint: String,
    corruption: &'a CorruptionSpec,
    metrics: &'a Metrics,
}

fn metrics_csv(m: &Metrics) -> String {
    let mut out = String::from("task,accuracy,macro_f1\n");
    for (task, t) in m.tasks() {
        out.push_str(&format!("{},{:.4},{:.4}\n", task, t.accuracy, t.macro_f1));
    }
    out.push_str(&format!("mean,{:.4},\n", m.mean_accuracy));
    out
}

fn cmd_eval(cfg: &mut RunConfig, strict: bool, dir: &Path, args: &EvalArgs) -> Result<()> {
    if let Some(text) = &args.corruption {
        let (s, t, mode) = parse_corruption(text)?;
        cfg.eval.spatial_rate = s;
        cfg.eval.temporal_rate = t;
        if let Some(m) = mode {
            cfg.eval.mode = m;
        }
        write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    }
    let spec = cfg.eval_corruption();
    spec.validate()?;
    let [_, _, test] = load_splits(cfg, strict)?;
    let model = load_classifier(&args.checkpoint)?;
    let metrics = evaluate(model.as_ref(), &test, Some(&spec))?;
    let name = args.checkpoint.file_name().map_or(String::new(), |n| n.to_string_lossy().into_owned());
    write_json(&dir.join("report.json"), &EvalReport { checkpoint: name, corruption: &spec, metrics: &metrics })?;
    write_text(&dir.join("metrics.csv"), &metrics_csv(&metrics))?;
    for (task, t) in metrics.tasks() {
        println!("{:<9} accuracy {:6.2}  macro-F1 {:6.2}", task, t.accuracy, t.macro_f1);
    }
    println!("mean      accuracy {:6.2}", metrics.mean_accuracy);
    Ok(())
}

fn sweep_csv(report: &SweepReport) -> (String, String) {
    let mut rows = String::from("spatial,temporal,mode,model,task,accuracy,macro_f1\n");
    for r in &report.rows {
        rows.push_str(&format!(
            "{},{},{},{},{},{:.4},{:.4}\n",
            r.spatial,
            r.temporal,
            r.mode.name(),
            r.model,
            r.task,
            r.accuracy,
            r.macro_f1
        ));
    }
    let mut deltas = String::from("spatial,temporal,mode,task,independent,distilled,delta\n");
    for d in &report.deltas {
        deltas.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4}\n",
            d.spatial,
            d.temporal,
            d.mode.name(),
            d.task,
            d.independent,
            d.distilled,
            d.delta
        ));
    }
    (rows, deltas)
}

fn cmd_sweep(cfg: &RunConfig, strict: bool, dir: &Path, args: &SweepArgs) -> Result<()> {
    let [_, _, test] = load_splits(cfg, strict)?;
    let independent = load_classifier(&args.independent)?;
    let distilled = load_classifier(&args.distilled)?;
    let report = corruption_sweep(independent.as_ref(), distilled.as_ref(), &test, &cfg.eval.sweep, cfg.seed)?;
    write_json(&dir.join("report.json"), &report)?;
    let (rows, deltas) = sweep_csv(&report);
    write_text(&dir.join("sweep.csv"), &rows)?;
    write_text(&dir.join("deltas.csv"), &deltas)?;
    for d in report.deltas.iter().filter(|d| d.task == "mean") {
        println!("s={:.2} t={:.2} independent {:6.2} distilled {:6.2} delta {:+.2}", d.spatial, d.temporal, d.independent, d.distilled, d.delta);
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    student: BenchResult,
    teacher: BenchResult,
    /// Student median latency over teacher median latency.
    latency_ratio: f64,
}

fn cmd_bench(cfg: &RunConfig, strict: bool, dir: &Path, args: &BenchArgs) -> Result<()> {
    let [_, _, test] = load_splits(cfg, strict)?;
    let seq = &test.samples.first().ok_or_else(|| Error::Config("test split is empty".into()))?.seq;
    let k = cfg.data.taxonomy.num_actions();
    let student: Box<dyn Classifier> = match &args.student {
        Some(p) => load_classifier(p)?,
        None => Box::new(Student::<f32>::new(cfg.student.model.clone(), k, cfg.seed)?),
    };
    let teacher: Box<dyn Classifier> = match &args.teacher {
        Some(p) => load_classifier(p)?,
        None => Box::new(Teacher::<f32>::new(cfg.teacher.model.clone(), k, cfg.seed)?),
    };
    let (n_warmup, n_iters) = (cfg.bench.n_warmup, cfg.bench.n_iters);
    let s = benchmark(student.as_ref(), seq, n_warmup, n_iters)?;
    let t = benchmark(teacher.as_ref(), seq, n_warmup, n_iters)?;
    for (name, r) in [("student", &s), ("teacher", &t)] {
        println!("{:<8} params {:>9}  median {:8.3} ms  p95 {:8.3} ms", name, r.params, r.median_ms, r.p95_ms);
    }
    let report = BenchReport { latency_ratio: s.median_ms / t.median_ms, student: s, teacher: t };
    write_json(&dir.join("report.json"), &report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corruption_flag_parses() {
        assert_eq!(parse_corruption("s=0.3,t=0.1").unwrap(), (0.3, 0.1, None));
        assert_eq!(parse_corruption("t=0,s=0.2,mode=noise").unwrap(), (0.2, 0.0, Some(CorruptionMode::Noise)));
        assert!(parse_corruption("s=0.3").is_err());
        assert!(parse_corruption("x=1,s=0,t=0").is_err());
        assert!(parse_corruption("s=0.3,t=0.3,mode=blur").is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::Config(String::new())),
            exit_code(&Error::Data(crate::pose::DataError::Dataset(String::new()))),
            exit_code(&Error::Contract(String::new())),
            exit_code(&Error::io("x", std::io::Error::other("x"))),
        ];
        let mut sorted = codes.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        assert!(codes.iter().all(|&c| c != 0));
    }

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["socialkd", "eval", "--checkpoint", "a.json", "--seed", "4", "--strict"]).unwrap();
        assert_eq!(cli.seed, Some(4));
        assert!(cli.strict);
        assert!(matches!(cli.command, Command::Eval(_)));
    }
}
