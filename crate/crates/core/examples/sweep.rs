//! Corruption sweep over the default 4×4 grid for two quickly trained
//! students (clean-trained versus corruption-trained).

use socialkd::corruption::CorruptionSpec;
use socialkd::distill::{train_student, StudentTrainConfig};
use socialkd::eval::{corruption_sweep, SweepGrid};
use socialkd::pose::{generate_synthetic, split_dataset, SyntheticConfig, Taxonomy};
use socialkd::student::{Student, StudentConfig};

fn main() -> socialkd::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, 20, 1))?;
    let [train, val, test] = split_dataset(&ds, [0.7, 0.15, 0.15], 1)?;
    let base = StudentTrainConfig { epochs: 8, augment_factor: 2, seed: 1, ..Default::default() };

    let mut clean = Student::<f32>::new(StudentConfig::default(), 10, 1)?;
    train_student(&mut clean, &train, &val, &StudentTrainConfig { corruption: CorruptionSpec::clean(), ..base.clone() })?;
    let mut robust = clean.clone();
    let corrupted = StudentTrainConfig { corruption: CorruptionSpec { warmup_epochs: 3, ..Default::default() }, ..base };
    train_student(&mut robust, &train, &val, &corrupted)?;

    let report = corruption_sweep(&clean, &robust, &test, &SweepGrid::default(), 1)?;
    println!("  s    t    clean  robust  delta (mean accuracy)");
    for d in report.deltas.iter().filter(|d| d.task == "mean") {
        println!("{:.1}  {:.1}  {:6.2}  {:6.2}  {:+6.2}", d.spatial, d.temporal, d.independent, d.distilled, d.delta);
    }
    Ok(())
}
