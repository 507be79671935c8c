//! Builds a loopy graph from training-set joint distances and trains a
//! two-round flooding model on it.
//!
//! cargo run --release --example loopy_graph -- [radius]

use crfcnn::graph::{build_loopy, quantile, GraphSpec, ScheduleKind};
use crfcnn::model::{evaluate, resolve_loopy, train, LoopySpec, ModelConfig, PoseModel, TrainConfig};
use crfcnn::synth::{generate, pairwise_distance_stats, DatasetSpec};

fn main() -> crfcnn::Result<()> {
    let radius = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(LoopySpec::default().radius);
    let train_set = generate(&DatasetSpec { count: 300, seed: 5, ..Default::default() })?;
    let test_set = generate(&DatasetSpec { count: 100, seed: 6, ..Default::default() })?;

    let base = GraphSpec::skeleton14().build()?;
    let d = pairwise_distance_stats(&train_set, &base)?;
    let loopy = build_loopy(&base, &d, 0.9, radius)?;
    println!("radius {radius}: {} tree edges -> {} edges", base.edges_h().len(), loopy.edges_h().len());
    for &(a, b) in loopy.edges_h().iter().filter(|&&(a, b)| !base.has_edge(a, b)).take(10) {
        println!("  + {}-{} (0.9-quantile {:.1})", base.name(a), base.name(b), quantile(d.get(a, b).expect("pair"), 0.9));
    }

    let mut cfg = ModelConfig { schedule: ScheduleKind::Flooding, iterations: 2, ..Default::default() };
    resolve_loopy(&mut cfg, &train_set, LoopySpec { radius, ..Default::default() })?;
    let model = PoseModel::new(cfg)?;
    let mut params = model.init_params(0);
    train(&model, &mut params, &train_set, None, &TrainConfig { epochs: 3, ..Default::default() }, |m, _| {
        println!("epoch {}  loss {:.4}", m.epoch, m.loss);
        Ok(())
    })?;
    let r = evaluate(&model, &params, &test_set)?;
    println!("test PCK@0.2 {:.3}  PCP@0.5 {:.3}", r.pck.mean, r.pcp.mean);
    Ok(())
}
