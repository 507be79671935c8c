//! Generates a few stick figures, writes them as a dataset directory with PGM
//! previews, and scores perturbed predictions with PCP and PCK.
//!
//! cargo run --release --example synthetic_data -- [out_dir]

use std::path::PathBuf;

use crfcnn::skeleton::{limbs, JOINT_NAMES};
use crfcnn::synth::{generate, pck, pcp, pcp_groups, save_dataset, torso_length, DatasetSpec};

fn main() -> crfcnn::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("crfcnn_synth"));
    let spec = DatasetSpec { count: 8, occlusion: 0.2, ..Default::default() };
    let samples = generate(&spec)?;
    save_dataset(&out, &spec, &samples, true)?;
    println!("wrote {} samples to {}", samples.len(), out.display());

    let s = &samples[0];
    for (name, j) in JOINT_NAMES.iter().zip(&s.joints) {
        println!("  {name:<11} ({:5.1}, {:5.1}) {}", j.x, j.y, if j.visible { "" } else { "occluded" });
    }

    let gt: Vec<Vec<(f64, f64)>> = samples.iter().map(|s| s.positions()).collect();
    // shift every prediction 2 px right
    let pred: Vec<Vec<(f64, f64)>> = gt.iter().map(|g| g.iter().map(|&(x, y)| (x + 2.0, y)).collect()).collect();
    let norms: Vec<f64> = gt.iter().map(|g| torso_length(g)).collect();
    let k = pck(&pred, &gt, &norms, 0.2)?;
    let p = pcp(&pred, &gt, &limbs(), 0.5)?;
    println!("PCK@0.2 {:.3}  PCP@0.5 {:.3}", k.mean, p.mean);
    for (name, r) in pcp_groups(&p.per_limb) {
        println!("  {name:<7} {:.3}", r);
    }
    Ok(())
}
