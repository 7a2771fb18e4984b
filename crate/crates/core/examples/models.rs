//! Builds the default student and a desk-scale teacher, prints their
//! parameter budgets and runs one forward pass of each.

use socialkd::pose::{generate_synthetic, SyntheticConfig, Taxonomy};
use socialkd::student::{Student, StudentConfig};
use socialkd::teacher::{Teacher, TeacherConfig};

fn main() -> socialkd::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, 1, 0))?;
    let seqs: Vec<_> = ds.samples.iter().take(4).map(|s| &s.seq).collect();

    let student = Student::<f32>::new(StudentConfig::default(), 10, 0)?;
    println!("student: {} parameters ({} in the Bi-LSTM)", student.count_params(), student.temporal_params());
    for (name, t) in student.params.iter() {
        println!("  {:<28} {:?}", name, t.shape());
    }
    let r = student.represent(&seqs)?;
    println!("student representation of {} clips: {} values", seqs.len(), r.len());

    let teacher = Teacher::<f32>::new(TeacherConfig { grid: 16, ..Default::default() }, 10, 0)?;
    println!(
        "teacher (grid 16): {} parameters, pathways {:?}, {} laterals",
        teacher.count_params(),
        teacher.modalities().iter().map(|m| m.name()).collect::<Vec<_>>(),
        teacher.laterals.len()
    );
    let r = teacher.represent(&seqs)?;
    println!("teacher representation of {} clips: {} values", seqs.len(), r.len());
    Ok(())
}
