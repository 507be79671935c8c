//! Compares serial/flooding schedules, scaled softmax/ReLU and tree/loopy
//! graphs on one synthetic benchmark, reporting test PCK@0.2 per variant.
//!
//! cargo run --release --example diagnostic_study -- [train] [test] [epochs] [seeds] [variant...]

use std::time::Instant;

use crfcnn::model::{LoopySpec, ModelConfig, TrainConfig};
use crfcnn::study::{run_variant, Variant};
use crfcnn::synth::{generate, DatasetSpec};

fn main() -> crfcnn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: usize| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(d);
    let (n_train, n_test, epochs, seeds) = (num(0, 400), num(1, 200), num(2, 4), num(3, 1));
    let picked: Vec<Variant> = args
        .iter()
        .skip(4)
        .filter_map(|a| serde_json::from_str(&format!("\"{a}\"")).ok())
        .collect();
    let variants = if picked.is_empty() { Variant::ALL.to_vec() } else { picked };

    let train_set = generate(&DatasetSpec { count: n_train, seed: 1000, ..Default::default() })?;
    let test_set = generate(&DatasetSpec { count: n_test, seed: 2000, ..Default::default() })?;
    let base = ModelConfig::default();
    for v in variants {
        let mut total = 0.0;
        for seed in 0..seeds as u64 {
            let start = Instant::now();
            let cfg = TrainConfig { epochs, seed, ..Default::default() };
            let r = run_variant(v, &base, &cfg, LoopySpec::default(), &train_set, &test_set)?;
            println!(
                "{:<30} seed {seed}  train loss {:.4}  test loss {:.4}  PCK {:.4}  PCP {:.4}  ({:.0}s)",
                v.label(),
                r.final_train_loss,
                r.report.loss,
                r.report.pck.mean,
                r.report.pcp.mean,
                start.elapsed().as_secs_f64()
            );
            total += r.report.pck.mean;
        }
        println!("{:<30} mean PCK {:.4}", v.label(), total / seeds as f64);
    }
    Ok(())
}
