//! Generates the synthetic JPL-style dataset, splits it and writes JSONL.
//!
//! cargo run --release --example synthetic_data -- [n_per_class] [out_dir]

use socialkd::pose::{generate_synthetic, split_dataset, write_jsonl, SyntheticConfig, Taxonomy};

fn main() -> socialkd::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "synthetic-data".into()));
    std::fs::create_dir_all(&out).expect("create output directory");

    let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, n, 7))?;
    let splits = split_dataset(&ds, [0.7, 0.15, 0.15], 7)?;
    for split in &splits {
        let path = out.join(format!("{}.jsonl", split.split.name()));
        write_jsonl(split, &path)?;
        println!("{:<5} {:>4} sequences -> {}", split.split.name(), split.len(), path.display());
    }

    let first = &splits[0].samples[0];
    let frame = &first.seq.frames[0];
    println!(
        "sample {}: {} frames, action {:?}, face {}, hands {}, gaze {}",
        first.seq.id,
        first.seq.len(),
        Taxonomy::Jpl.action_name(first.label.action),
        frame.face.is_some(),
        frame.hands.is_some(),
        frame.gaze.is_some()
    );
    Ok(())
}
