use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use crfcnn::graph::{build_tree, plan_flooding, plan_serial_route, quantile, to_factor_graph, FactorGraph, JointGraph};
use crfcnn::message::{propagate, PairwiseKernels, Tau, Trace, UnaryMaps};
use crfcnn::params::KernelVars;
use crfcnn::tape::Tape;
use crfcnn::Tensor;

/// Tree on `parents.len() + 1` vertices: vertex `i + 1` hangs off `parents[i] % (i + 1)`.
fn tree(parents: &[usize]) -> JointGraph {
    let edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(i, &p)| (p % (i + 1), i + 1)).collect();
    build_tree(parents.len() + 1, &edges, &[]).unwrap()
}

fn values(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut s = seed | 1;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            scale * ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
        })
        .collect()
}

fn kernels(tape: &mut Tape, fg: &FactorGraph, l: usize, k: usize, seed: u64) -> PairwiseKernels {
    let mut map = HashMap::new();
    for f in 0..fg.factor_count() {
        let [a, b] = fg.factor_vars(f);
        for (i, e) in [(a, b), (b, a)].into_iter().enumerate() {
            let w = Tensor::new(vec![l, l, k, k], values(seed + 31 * f as u64 + i as u64, l * l * k * k, 1.5)).unwrap();
            map.insert(e, KernelVars { w: tape.var(w), b: None });
        }
    }
    PairwiseKernels::shared(map)
}

fn channel_sum_error(t: &Tensor, beta: f64) -> f64 {
    let (l, h, w) = t.chw().unwrap();
    let mut worst: f64 = 0.0;
    for p in 0..h * w {
        let s: f64 = (0..l).map(|c| t.channel(c)[p]).sum();
        worst = worst.max((s - beta).abs());
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serial_route_fires_each_directed_edge_once(parents in prop::collection::vec(0usize..64, 0..12), root in 0usize..64) {
        let g = tree(&parents);
        let fg = to_factor_graph(&g);
        let s = plan_serial_route(&fg, root % g.len()).unwrap();
        prop_assert_eq!(s.variable_edge_messages(), 2 * (g.len() - 1));
        prop_assert!(s.respects_dependencies(&fg));
        let edges = s.directed_edges(&fg);
        let unique: HashSet<_> = edges.iter().copied().collect();
        prop_assert_eq!(unique.len(), edges.len());
        for &(a, b) in &edges {
            prop_assert!(g.has_edge(a, b));
        }
    }

    #[test]
    fn flooding_round_sends_on_every_directed_edge(parents in prop::collection::vec(0usize..64, 1..12), m in 1usize..4) {
        let g = tree(&parents);
        let fg = to_factor_graph(&g);
        let s = plan_flooding(&fg, m).unwrap();
        prop_assert_eq!(s.iterations, m);
        prop_assert_eq!(s.variable_edge_messages(), 2 * fg.factor_count());
    }

    #[test]
    fn every_normalized_output_sums_to_beta(
        parents in prop::collection::vec(0usize..64, 0..6),
        l in 2usize..5,
        hw in 1usize..6,
        alpha in 0.1f64..2.0,
        beta in 0.5f64..6.0,
        flooding in any::<bool>(),
        m in 1usize..3,
        seed in any::<u64>(),
    ) {
        let g = tree(&parents);
        let fg = to_factor_graph(&g);
        let schedule = if flooding { plan_flooding(&fg, m).unwrap() } else { plan_serial_route(&fg, 0).unwrap().with_iterations(m).unwrap() };
        let tau = Tau::ScaledSoftmax { alpha, beta };
        let mut tape = Tape::new();
        let maps = (0..g.len())
            .map(|v| tape.var(Tensor::new(vec![l, hw, hw], values(seed ^ ((v as u64 + 1) * 7919), l * hw * hw, 3.0)).unwrap()))
            .collect();
        let u = UnaryMaps::new(&tape, maps).unwrap();
        let k = kernels(&mut tape, &fg, l, 3, seed);
        let mut trace = Trace::default();
        let out = propagate(&mut tape, &u, &fg, &schedule, &k, tau, Some(&mut trace), g.names()).unwrap();
        for &b in &out {
            prop_assert!(channel_sum_error(tape.value(b), beta) < 1e-10);
        }
        for (name, v) in &trace.entries {
            let e = channel_sum_error(tape.value(*v), beta);
            prop_assert!(e < 1e-10, "{} off by {}", name, e);
        }
    }

    #[test]
    fn quantile_is_a_sample_covering_the_fraction(xs in prop::collection::vec(-100.0f64..100.0, 1..40), f in 0.01f64..1.0) {
        let q = quantile(&xs, f);
        prop_assert!(xs.contains(&q));
        let below = xs.iter().filter(|&&x| x <= q).count();
        prop_assert!(below as f64 >= (f * xs.len() as f64).ceil());
        let strictly = xs.iter().filter(|&&x| x < q).count();
        prop_assert!((strictly as f64) < (f * xs.len() as f64).ceil());
    }
}

#[test]
fn relu_beliefs_are_nonnegative() {
    let g = tree(&[0, 1, 1, 0]);
    let fg = to_factor_graph(&g);
    let mut tape = Tape::new();
    let maps = (0..g.len()).map(|v| tape.var(Tensor::new(vec![3, 4, 4], values(v as u64 + 9, 48, 2.0)).unwrap())).collect();
    let u = UnaryMaps::new(&tape, maps).unwrap();
    let k = kernels(&mut tape, &fg, 3, 3, 5);
    let out = propagate(&mut tape, &u, &fg, &plan_serial_route(&fg, 0).unwrap(), &k, Tau::Relu, None, g.names()).unwrap();
    for b in out {
        assert!(tape.value(b).data().iter().all(|&x| x >= 0.0));
    }
}
