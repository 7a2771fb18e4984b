//! Spatiotemporal keypoint corruption: exact counts, the Monte-Carlo
//! corrupted fraction and the warm-up ramp.

use socialkd::corruption::{corrupt_sequence, scheduled_rates, CorruptionMode, CorruptionSpec};
use socialkd::pose::{generate_synthetic, Keypoint, SyntheticConfig, Taxonomy};
use socialkd::seed;

fn main() -> socialkd::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, 1, 0))?;
    let seq = &ds.samples[0].seq;
    let spec = CorruptionSpec::new(0.3, 0.3, CorruptionMode::Zero);

    let out = corrupt_sequence(seq, &spec, &mut seed::rng(0, &[1]));
    for (t, frame) in out.frames.iter().enumerate() {
        let row: String = frame.body.iter().map(|k| if *k == Keypoint::MISSING { 'x' } else { 'o' }).collect();
        println!("frame {:>2}  {}", t, row);
    }

    let trials = 10_000;
    let mut missing = 0usize;
    for i in 0..trials {
        let c = corrupt_sequence(seq, &spec, &mut seed::rng(1, &[i as u64]));
        missing += c.frames.iter().flat_map(|f| &f.body).filter(|k| **k == Keypoint::MISSING).count();
    }
    let total = trials * seq.len() * 17;
    println!("corrupted fraction over {} clips: {:.4}", trials, missing as f64 / total as f64);

    println!("warm-up schedule (target s=t=0.3 at epoch 30):");
    for epoch in [0, 10, 15, 20, 30, 70] {
        let (s, t) = scheduled_rates(&CorruptionSpec::default(), epoch);
        println!("  epoch {:>2}: s={:.3} t={:.3}", epoch, s, t);
    }
    Ok(())
}
