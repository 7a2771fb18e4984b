//! Single-threaded inference latency of the student and a desk-scale
//! teacher on one clip.

use socialkd::eval::benchmark;
use socialkd::pose::{generate_synthetic, SyntheticConfig, Taxonomy};
use socialkd::student::{Student, StudentConfig};
use socialkd::teacher::{Teacher, TeacherConfig};

fn main() -> socialkd::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, 1, 0))?;
    let seq = &ds.samples[0].seq;
    let student = Student::<f32>::new(StudentConfig::default(), 10, 0)?;
    let s = benchmark(&student, seq, 10, 100)?;
    for grid in [16, 32, 56] {
        let teacher = Teacher::<f32>::new(TeacherConfig { grid, ..Default::default() }, 10, 0)?;
        let t = benchmark(&teacher, seq, 3, 30)?;
        println!(
            "grid {:>2}: teacher {:>8} params {:8.2} ms | student {:>7} params {:6.3} ms | ratio {:.4}",
            grid,
            t.params,
            t.median_ms,
            s.params,
            s.median_ms,
            s.median_ms / t.median_ms
        );
    }
    Ok(())
}
