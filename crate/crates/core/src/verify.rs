//! Self-checks behind `crfcnn verify`: exact inference against enumeration,
//! finite-difference gradients, and schedule reachability probes.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{build_tree, plan_flooding, plan_serial_route, to_factor_graph, GraphSpec, JointGraph, Schedule};
use crate::message::{propagate, PairwiseKernels, Tau, UnaryMaps};
use crate::model::{spatial_softmax_loss, spatial_softmax_loss_value, ExtractorConfig, ModelConfig, PoseModel};
use crate::oracle::{brute_force_joint, random_tree_crf, tree_sum_product};
use crate::params::{KernelVars, ModelParams};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub instances: usize,
    pub max_deviation: f64,
}

/// Sum-product against brute force on random tree-structured CRFs with
/// `n <= max_groups` groups and `L <= max_states` states.
pub fn oracle_check(instances: usize, max_groups: usize, max_states: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev: f64 = 0.0;
    for i in 0..instances {
        let n = rng.gen_range(1..=max_groups);
        let crf = random_tree_crf(&mut rng, n, 2, max_states, i % 2 == 0);
        let sp = tree_sum_product(&crf)?;
        let joint = brute_force_joint(&crf)?;
        for (v, m) in sp.iter().enumerate() {
            for (a, b) in m.iter().zip(joint.marginal(v)) {
                max_dev = max_dev.max((a - b).abs());
            }
        }
    }
    Ok(OracleReport { instances, max_deviation: max_dev })
}

/// Three joints on a path, 16x16 input pooled to 8x8 maps, `L = 3`.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        graph: GraphSpec {
            joints: vec!["a".into(), "b".into(), "c".into()],
            edges: vec![("a".into(), "b".into()), ("b".into(), "c".into())],
            interpolate: vec![],
            root: None,
        },
        extractor: ExtractorConfig { channels: vec![4], kernel: 3, pool: 2, pool_after: 1 },
        group_channels: 3,
        pairwise_kernel: 3,
        ..Default::default()
    }
}

pub const GRADCHECK_EPS: f64 = 1e-5;
/// Denominator floor for relative error, so near-zero gradients are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Central differences against tape gradients for every scalar parameter.
pub fn gradcheck(config: &ModelConfig, image_size: usize, seed: u64) -> Result<GradcheckReport> {
    let model = PoseModel::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = model.init_params(seed);
    // non-zero biases so their paths are exercised
    let names: Vec<String> = params.names().cloned().collect();
    for n in &names {
        let t = params.get_mut(n).expect("listed");
        if t.dims().len() == 1 {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    let image = Tensor::from_fn(&[config.image_channels, image_size, image_size], |_| rng.gen_range(0.0..1.0));
    let cells = image_size / model.stride();
    let gt: Vec<Option<(usize, usize)>> =
        (0..model.graph().len()).map(|_| Some((rng.gen_range(0..cells), rng.gen_range(0..cells)))).collect();

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.constant(image.clone());
    let logits = model.forward(&mut tape, &bound, x, None)?;
    let loss = spatial_softmax_loss(&mut tape, &logits, &gt)?;
    let grads = bound.grads(&tape.backward(loss)?, &params);

    let loss_at = |p: &ModelParams| -> Result<f64> { spatial_softmax_loss_value(&model.infer(p, &image)?, &gt) };
    let mut report = GradcheckReport { checked: 0, max_rel_error: 0.0, worst: String::new() };
    for n in &names {
        for i in 0..params.get(n).expect("listed").len() {
            let orig = params.get(n).expect("listed").data()[i];
            params.get_mut(n).expect("listed").data_mut()[i] = orig + GRADCHECK_EPS;
            let up = loss_at(&params)?;
            params.get_mut(n).expect("listed").data_mut()[i] = orig - GRADCHECK_EPS;
            let down = loss_at(&params)?;
            params.get_mut(n).expect("listed").data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * GRADCHECK_EPS);
            let an = grads[n].data()[i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(GRADCHECK_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{n}[{i}]: analytic {an:e}, numeric {fd:e}");
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// `sensitive[i][j]`: does belief `i` change when unary `j` is perturbed?
pub fn belief_sensitivity(graph: &JointGraph, schedule: &Schedule, tau: Tau, seed: u64) -> Result<Vec<Vec<bool>>> {
    let fg = to_factor_graph(graph);
    let n = graph.len();
    let (l, hw, k) = (3, 5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<Tensor> = (0..n).map(|_| Tensor::from_fn(&[l, hw, hw], |_| rng.gen_range(-1.0..1.0))).collect();
    let weights: Vec<((usize, usize), Tensor)> = (0..fg.factor_count())
        .flat_map(|f| {
            let [a, b] = fg.factor_vars(f);
            [(a, b), (b, a)]
        })
        .map(|e| (e, Tensor::from_fn(&[l, l, k, k], |_| rng.gen_range(-0.5..0.5))))
        .collect();
    let run = |unaries: &[Tensor]| -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let maps = unaries.iter().map(|u| tape.constant(u.clone())).collect();
        let u = UnaryMaps::new(&tape, maps)?;
        let mut map = HashMap::new();
        for (e, w) in &weights {
            map.insert(*e, KernelVars { w: tape.constant(w.clone()), b: None });
        }
        let q = propagate(&mut tape, &u, &fg, schedule, &PairwiseKernels::shared(map), tau, None, graph.names())?;
        Ok(q.iter().map(|&v| tape.value(v).clone()).collect())
    };
    let reference = run(&base)?;
    let mut out = vec![vec![false; n]; n];
    for j in 0..n {
        // per-element noise: a uniform shift across channels would be invisible to softmax
        let mut pert = base.clone();
        pert[j] = Tensor::from_fn(pert[j].dims(), |i| base[j].data()[i] + rng.gen_range(-0.5..0.5));
        let q = run(&pert)?;
        for i in 0..n {
            out[i][j] = q[i].max_abs_diff(&reference[i]) > 1e-12;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ReachabilityCase {
    pub name: String,
    pub passed: bool,
}

/// Serial one pass reaches everything; flooding with `m` rounds reaches exactly hop distance `<= m`.
pub fn reachability_check(seed: u64) -> Result<Vec<ReachabilityCase>> {
    let tau = Tau::default_softmax(3);
    let skeleton = GraphSpec::skeleton14().build()?;
    let path4 = build_tree(4, &[(0, 1), (1, 2), (2, 3)], &[])?;
    let path3 = build_tree(3, &[(0, 1), (1, 2)], &[])?;
    let mut cases = Vec::new();
    for (name, g) in [("path3", &path3), ("path4", &path4), ("skeleton14", &skeleton)] {
        let fg = to_factor_graph(g);
        let serial = plan_serial_route(&fg, 0)?;
        let s = belief_sensitivity(g, &serial, tau, seed)?;
        cases.push(ReachabilityCase {
            name: format!("{name}: serial one pass reaches every node"),
            passed: s.iter().flatten().all(|&b| b),
        });
        for m in 1..=3 {
            let s = belief_sensitivity(g, &plan_flooding(&fg, m)?, tau, seed)?;
            let ok = (0..g.len()).all(|i| {
                let d = g.hop_distances(i);
                (0..g.len()).all(|j| s[i][j] == d[j].is_some_and(|d| d <= m))
            });
            cases.push(ReachabilityCase { name: format!("{name}: flooding M={m} reaches exactly distance <= {m}"), passed: ok });
        }
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_oracle_run() {
        let r = oracle_check(10, 4, 3, 1).unwrap();
        assert!(r.max_deviation < 1e-10);
    }

    #[test]
    fn reachability_holds() {
        for c in reachability_check(0).unwrap() {
            assert!(c.passed, "{}", c.name);
        }
    }

    #[test]
    fn path3_flooding_one_round_misses_distance_two() {
        let g = build_tree(3, &[(0, 1), (1, 2)], &[]).unwrap();
        let fg = to_factor_graph(&g);
        let s = belief_sensitivity(&g, &plan_flooding(&fg, 1).unwrap(), Tau::default_softmax(3), 3).unwrap();
        assert!(!s[0][2] && !s[2][0] && s[0][1] && s[1][2]);
    }
}
