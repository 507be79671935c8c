//! Convolutional message passing on the 14-joint skeleton: serial vs.
//! flooding routes, step counts, belief normalization and which unaries each
//! belief can see.
//!
//! cargo run --release --example message_passing

use crfcnn::graph::{plan_flooding, plan_serial_route, to_factor_graph, GraphSpec};
use crfcnn::message::Tau;
use crfcnn::verify::belief_sensitivity;

fn main() -> crfcnn::Result<()> {
    let spec = GraphSpec::skeleton14();
    let g = spec.build()?;
    let fg = to_factor_graph(&g);
    let root = spec.root_index()?;
    let serial = plan_serial_route(&fg, root)?;
    println!("{} vertices, {} edges", g.len(), fg.factor_count());
    println!("serial route from {}: {} directed variable-edge messages", g.name(root), serial.variable_edge_messages());
    for (from, to) in serial.directed_edges(&fg).iter().take(6) {
        println!("  {} -> {}", g.name(*from), g.name(*to));
    }
    println!("  ...");

    let tau = Tau::default_softmax(3);
    let wrist = g.index_of("r_wrist").expect("joint");
    let report = |label: &str, s: &[Vec<bool>]| {
        let seen: Vec<&str> = (0..g.len()).filter(|&j| s[wrist][j]).map(|j| g.name(j)).collect();
        println!("{label}: r_wrist belief depends on {} unaries: {}", seen.len(), seen.join(" "));
    };
    report("serial, one pass", &belief_sensitivity(&g, &serial, tau, 0)?);
    for m in 1..=3 {
        report(&format!("flooding, M={m}"), &belief_sensitivity(&g, &plan_flooding(&fg, m)?, tau, 0)?);
    }
    Ok(())
}
