//! Exact marginals of a small discrete CRF by enumeration and by two-sweep
//! sum-product, plus naive mean field on a loopy variant.
//!
//! cargo run --release --example exact_inference

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crfcnn::oracle::{
    brute_force_joint, kl_divergence, mean_field_fixed_point, random_tree_crf, tree_sum_product, PairTerm,
};

fn main() -> crfcnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let crf = random_tree_crf(&mut rng, 5, 2, 3, true);
    let joint = brute_force_joint(&crf)?;
    let sp = tree_sum_product(&crf)?;
    println!("{} variables, {} joint states, log Z = {:.6}", crf.var_count(), joint.probs.len(), joint.log_z);
    for (v, m) in sp.iter().enumerate() {
        let exact = joint.marginal(v);
        let dev = m.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("var {v}: sum-product {m:.4?}  |dev| {dev:.1e}");
    }

    // close a loop between the first and last feature groups
    let mut loopy = crf.clone();
    let (a, b) = (0, loopy.h_states.len() - 1);
    let table = vec![vec![0.75; loopy.h_states[b]]; loopy.h_states[a]];
    loopy.psi_h.push(PairTerm { a, b, table: table.iter().enumerate().map(|(i, r)| r.iter().enumerate().map(|(j, v)| if i == j { -v } else { *v }).collect()).collect() });
    let joint = brute_force_joint(&loopy)?;
    for sweeps in [0, 1, 2, 4, 8] {
        let q = mean_field_fixed_point(&loopy, sweeps)?;
        println!("mean field after {sweeps} sweeps: KL(Q || p) = {:.6}", kl_divergence(&q, &joint));
    }
    Ok(())
}
