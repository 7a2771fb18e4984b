//! Small end-to-end run: train a teacher on the synthetic set, then an
//! independent and a distilled student under corruption, and compare them
//! on the corrupted test split.
//!
//! cargo run --release --example distillation -- [n_per_class]

use socialkd::corruption::CorruptionSpec;
use socialkd::distill::{distill_student, train_student, train_teacher, StudentTrainConfig, TeacherTrainConfig};
use socialkd::eval::evaluate;
use socialkd::pose::{generate_synthetic, split_dataset, SyntheticConfig, Taxonomy};
use socialkd::student::{Student, StudentConfig};
use socialkd::teacher::{Teacher, TeacherConfig};
use socialkd::tensor::OptimizerKind;

fn main() -> socialkd::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed = 0;
    let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, n, seed))?;
    let [train, val, test] = split_dataset(&ds, [0.7, 0.15, 0.15], seed)?;

    let mut teacher = Teacher::<f32>::new(TeacherConfig { grid: 16, ..Default::default() }, 10, seed)?;
    let tcfg = TeacherTrainConfig {
        pretrain_epochs: 2,
        epochs: 8,
        batch_size: 32,
        augment_factor: 1,
        optimizer: OptimizerKind::sgd(0.1, 0.9),
        seed,
        ..Default::default()
    };
    let out = train_teacher(&mut teacher, &train, &val, &tcfg)?;
    let tm = evaluate(&teacher, &test, None)?;
    println!("teacher: best epoch {:?}, test mean accuracy {:.2}", out.best_epoch, tm.mean_accuracy);

    let scfg = StudentTrainConfig {
        epochs: 12,
        augment_factor: 4,
        corruption: CorruptionSpec { warmup_epochs: 5, seed, ..Default::default() },
        seed,
        ..Default::default()
    };
    let test_spec = CorruptionSpec { seed, ..CorruptionSpec::default() };
    let mut independent = Student::<f32>::new(StudentConfig::default(), 10, seed)?;
    train_student(&mut independent, &train, &val, &scfg)?;
    let mut distilled = independent.clone();
    distill_student(&mut distilled, &teacher, &train, &val, &scfg)?;
    for (name, s) in [("independent", &independent), ("distilled", &distilled)] {
        let m = evaluate(s, &test, Some(&test_spec))?;
        println!(
            "{:<11} corrupted test: intent {:.1} attitude {:.1} action {:.1} mean {:.2}",
            name, m.intent.accuracy, m.attitude.accuracy, m.action.accuracy, m.mean_accuracy
        );
    }
    Ok(())
}
