//! Trains the default serial-tree model on a small synthetic set and prints
//! per-epoch metrics.
//!
//! cargo run --release --example train_toy -- [train_count] [epochs]

use std::time::Instant;

use crfcnn::model::{evaluate, train, ModelConfig, PoseModel, TrainConfig};
use crfcnn::synth::{generate, DatasetSpec};

fn main() -> crfcnn::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n_train = args.first().copied().unwrap_or(200);
    let epochs = args.get(1).copied().unwrap_or(5);

    let train_set = generate(&DatasetSpec { count: n_train, seed: 1, ..Default::default() })?;
    let test_set = generate(&DatasetSpec { count: 100, seed: 2, ..Default::default() })?;
    let model = PoseModel::new(ModelConfig::default())?;
    let mut params = model.init_params(0);
    println!("{} parameters", params.scalar_count());

    let cfg = TrainConfig { epochs, ..Default::default() };
    let start = Instant::now();
    train(&model, &mut params, &train_set, None, &cfg, |m, _| {
        println!(
            "epoch {:>3}  loss {:.4}  train PCK {:.3}  PCP {:.3}  ({:.1}s)",
            m.epoch,
            m.loss,
            m.pck,
            m.pcp,
            start.elapsed().as_secs_f64()
        );
        Ok(())
    })?;
    let r = evaluate(&model, &params, &test_set)?;
    println!("test: loss {:.4}  PCK@0.2 {:.3}  PCP@0.5 {:.3}", r.loss, r.pck.mean, r.pcp.mean);
    Ok(())
}
