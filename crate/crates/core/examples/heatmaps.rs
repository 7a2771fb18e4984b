//! Renders every teacher modality of one synthetic clip as Gaussian heatmaps
//! and prints an ASCII view of the first frame's summed pose maps.

use socialkd::heatmap::{keypoints_to_heatmaps, Modality};
use socialkd::pose::{generate_synthetic, SyntheticConfig, Taxonomy};

const GRID: usize = 24;

fn main() -> socialkd::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, 1, 3))?;
    let seq = &ds.samples[4].seq;
    println!("clip {} ({} frames)", seq.id, seq.len());

    for m in Modality::ALL {
        let stack = keypoints_to_heatmaps::<f64>(seq, m, (GRID, GRID), 1.0)?;
        let data = stack.channels_first();
        let peak = data.iter().cloned().fold(0.0, f64::max);
        let mass: f64 = data.iter().sum();
        println!("{:<6} {:>3} channels  peak {:.3}  total mass {:9.2}", m.name(), m.channels(), peak, mass);
    }

    let pose = keypoints_to_heatmaps::<f64>(seq, Modality::Pose, (GRID, GRID), 1.0)?;
    let shades = [' ', '.', ':', '+', '#'];
    for y in 0..GRID {
        let row: String = (0..GRID)
            .map(|x| {
                let v: f64 = (0..17).map(|j| pose.get(0, j, y, x)).sum();
                shades[((v * 4.0).round() as usize).min(4)]
            })
            .collect();
        println!("|{}|", row);
    }
    Ok(())
}
