//! Joint-level graphs, their feature-group mirrors, and factor graphs.
//!
//! A [`JointGraph`] carries two edge sets: `E_z` over body joints and `E_h`
//! over the feature groups attached to them. Group `h_i` belongs to joint
//! `z_i`, and the two edge sets are always identical as vertex-pair sets.

mod schedule;
mod spec;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

pub use schedule::{plan_flooding, plan_serial_route, Schedule, ScheduleKind, Step};
pub use spec::{GraphSpec, InterpSpec};

use crate::error::{Error, Result};

/// How a vertex gets its ground-truth location.
#[derive(Clone, Debug, PartialEq)]
pub enum VertexKind {
    /// An annotated body joint (index into the annotation list).
    Joint(usize),
    /// Linear interpolation `(1 - t) * a + t * b` between two vertices.
    Interpolated { a: usize, b: usize, t: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    Tree,
    Loopy,
}

/// One interpolation request: splice `count` vertices between `a` and `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolation {
    pub a: usize,
    pub b: usize,
    pub count: usize,
    /// Positions along `a -> b`; evenly spaced when `None`.
    pub fractions: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointGraph {
    names: Vec<String>,
    kinds: Vec<VertexKind>,
    edges_z: Vec<(usize, usize)>,
    edges_h: Vec<(usize, usize)>,
    topology: Topology,
}

fn norm(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Union-find root with path halving.
fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl JointGraph {
    fn from_parts(names: Vec<String>, kinds: Vec<VertexKind>, edges: BTreeSet<(usize, usize)>, topology: Topology) -> Self {
        let edges: Vec<_> = edges.into_iter().collect();
        JointGraph { names, kinds, edges_h: edges.clone(), edges_z: edges, topology }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn kind(&self, v: usize) -> &VertexKind {
        &self.kinds[v]
    }

    pub fn kinds(&self) -> &[VertexKind] {
        &self.kinds
    }

    /// Number of annotated (non-interpolated) joints.
    pub fn joint_count(&self) -> usize {
        self.kinds.iter().filter(|k| matches!(k, VertexKind::Joint(_))).count()
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Joint edge set `E_z`, each pair ordered `(lo, hi)`.
    pub fn edges_z(&self) -> &[(usize, usize)] {
        &self.edges_z
    }

    /// Feature-group edge set `E_h`.
    pub fn edges_h(&self) -> &[(usize, usize)] {
        &self.edges_h
    }

    /// Feature group attached to joint `z` (`E_zh` pairs `z_i` with `h_i`).
    pub fn group_of(&self, z: usize) -> usize {
        z
    }

    /// `(h_i, h_j) in E_h` iff `(z_i, z_j) in E_z`.
    pub fn is_mirrored(&self) -> bool {
        let z: BTreeSet<_> = self.edges_z.iter().map(|&(a, b)| (self.group_of(a), self.group_of(b))).map(|(a, b)| norm(a, b)).collect();
        let h: BTreeSet<_> = self.edges_h.iter().copied().collect();
        z == h
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges_h.binary_search(&norm(a, b)).is_ok()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.edges_h
            .iter()
            .filter_map(|&(a, b)| if a == v { Some(b) } else if b == v { Some(a) } else { None })
            .collect()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges_h.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    /// Breadth-first hop counts from `src`; `None` for unreachable vertices.
    pub fn hop_distances(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].expect("queued vertices have a distance");
            for u in self.neighbors(v) {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Ground-truth positions for every vertex from annotated joint positions.
    pub fn vertex_positions(&self, joints: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut pos = vec![(0.0, 0.0); self.len()];
        for (v, k) in self.kinds.iter().enumerate() {
            if let VertexKind::Joint(j) = k {
                pos[v] = joints[*j];
            }
        }
        // interpolated vertices are appended after their parents
        for (v, k) in self.kinds.iter().enumerate() {
            if let VertexKind::Interpolated { a, b, t } = *k {
                pos[v] = ((1.0 - t) * pos[a].0 + t * pos[b].0, (1.0 - t) * pos[a].1 + t * pos[b].1);
            }
        }
        pos
    }
}

/// Builds a tree over `n_joints` joints, splicing interpolated vertices into edges.
pub fn build_tree(n_joints: usize, edges: &[(usize, usize)], interpolated: &[Interpolation]) -> Result<JointGraph> {
    let names = (0..n_joints).map(|i| format!("j{i}")).collect();
    build_tree_named(names, edges, interpolated)
}

pub fn build_tree_named(names: Vec<String>, edges: &[(usize, usize)], interpolated: &[Interpolation]) -> Result<JointGraph> {
    let n_joints = names.len();
    if n_joints == 0 {
        return Err(Error::Graph("graph needs at least one joint".into()));
    }
    let mut names = names;
    let mut kinds: Vec<_> = (0..n_joints).map(VertexKind::Joint).collect();
    let mut set = BTreeSet::new();
    for &(a, b) in edges {
        if a >= n_joints || b >= n_joints {
            return Err(Error::Graph(format!("edge ({a}, {b}) references a missing joint")));
        }
        if a == b {
            return Err(Error::Graph(format!("self-loop on joint {a}")));
        }
        if !set.insert(norm(a, b)) {
            return Err(Error::Graph(format!("duplicate edge ({a}, {b})")));
        }
    }
    for interp in interpolated {
        let (a, b) = (interp.a, interp.b);
        if a >= n_joints || b >= n_joints || a == b {
            return Err(Error::Graph(format!("bad interpolation endpoints ({a}, {b})")));
        }
        let fractions = match &interp.fractions {
            Some(f) if f.len() != interp.count => {
                return Err(Error::Graph(format!("{} fractions given for {} interpolated vertices", f.len(), interp.count)))
            }
            Some(f) => f.clone(),
            None => (1..=interp.count).map(|k| k as f64 / (interp.count + 1) as f64).collect(),
        };
        if fractions.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Graph("interpolation fractions must lie strictly inside (0, 1)".into()));
        }
        set.remove(&norm(a, b));
        let mut prev = a;
        for (k, &t) in fractions.iter().enumerate() {
            let v = names.len();
            names.push(format!("{}~{}/{}", names[a], names[b], k + 1));
            kinds.push(VertexKind::Interpolated { a, b, t });
            set.insert(norm(prev, v));
            prev = v;
        }
        set.insert(norm(prev, b));
    }

    let n = names.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in &set {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return Err(Error::Cycle);
        }
        parent[ra] = rb;
    }
    let root = find(&mut parent, 0);
    if (1..n).any(|v| find(&mut parent, v) != root) {
        return Err(Error::Disconnected);
    }
    Ok(JointGraph::from_parts(names, kinds, set, Topology::Tree))
}

/// Per-vertex-pair distance samples gathered over a training set.
#[derive(Clone, Debug, Default)]
pub struct PairDistances {
    samples: BTreeMap<(usize, usize), Vec<f64>>,
}

impl PairDistances {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, a: usize, b: usize, d: f64) {
        self.samples.entry(norm(a, b)).or_default().push(d);
    }

    pub fn get(&self, a: usize, b: usize) -> Option<&[f64]> {
        self.samples.get(&norm(a, b)).map(Vec::as_slice)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<f64>)> {
        self.samples.iter()
    }
}

/// Smallest sample `q` such that at least `fraction` of samples are `<= q`.
pub fn quantile(samples: &[f64], fraction: f64) -> f64 {
    assert!(!samples.is_empty(), "quantile of no samples");
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let k = (fraction * s.len() as f64).ceil() as usize;
    s[k.clamp(1, s.len()) - 1]
}

pub const LOOPY_DEFAULT_FRACTION: f64 = 0.9;
/// About a quarter of the height of a default-size figure.
pub const LOOPY_DEFAULT_RADIUS: f64 = 12.0;

/// Adds edge `(i, j)` to a tree whenever the `fraction`-quantile of its distances is within `radius`.
pub fn build_loopy(base: &JointGraph, distances: &PairDistances, fraction: f64, radius: f64) -> Result<JointGraph> {
    if base.topology != Topology::Tree {
        return Err(Error::Graph("loopy construction needs a tree base".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Graph(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut set: BTreeSet<_> = base.edges_h.iter().copied().collect();
    for i in 0..base.len() {
        for j in i + 1..base.len() {
            let d = distances.get(i, j).filter(|d| !d.is_empty()).ok_or(Error::MissingDistance(i, j))?;
            if !set.contains(&(i, j)) && quantile(d, fraction) <= radius {
                set.insert((i, j));
            }
        }
    }
    Ok(JointGraph::from_parts(base.names.clone(), base.kinds.clone(), set, Topology::Loopy))
}

/// Adds explicit extra edges to a tree, e.g. edges chosen earlier by [`build_loopy`].
pub fn with_extra_edges(base: &JointGraph, extra: &[(usize, usize)]) -> Result<JointGraph> {
    if extra.is_empty() {
        return Ok(base.clone());
    }
    let mut set: BTreeSet<_> = base.edges_h.iter().copied().collect();
    for &(a, b) in extra {
        if a >= base.len() || b >= base.len() || a == b {
            return Err(Error::Graph(format!("bad extra edge ({a}, {b})")));
        }
        set.insert(norm(a, b));
    }
    Ok(JointGraph::from_parts(base.names.clone(), base.kinds.clone(), set, Topology::Loopy))
}

/// Bipartite graph: one variable per feature group, one degree-2 factor per edge of `E_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraph {
    var_count: usize,
    factors: Vec<[usize; 2]>,
    var_factors: Vec<Vec<usize>>,
}

pub fn to_factor_graph(g: &JointGraph) -> FactorGraph {
    let factors: Vec<[usize; 2]> = g.edges_h.iter().map(|&(a, b)| [a, b]).collect();
    let mut var_factors = vec![Vec::new(); g.len()];
    for (f, &[a, b]) in factors.iter().enumerate() {
        var_factors[a].push(f);
        var_factors[b].push(f);
    }
    FactorGraph { var_count: g.len(), factors, var_factors }
}

impl FactorGraph {
    pub fn var_count(&self) -> usize {
        self.var_count
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    /// `ne(f)`: the two variables a factor couples.
    pub fn factor_vars(&self, f: usize) -> [usize; 2] {
        self.factors[f]
    }

    /// `ne(v)`: factors touching variable `v`, ascending.
    pub fn var_factors(&self, v: usize) -> &[usize] {
        &self.var_factors[v]
    }

    /// The endpoint of factor `f` that is not `v`.
    pub fn other_var(&self, f: usize, v: usize) -> usize {
        let [a, b] = self.factors[f];
        if a == v {
            b
        } else {
            debug_assert_eq!(b, v);
            a
        }
    }

    pub fn factor_between(&self, a: usize, b: usize) -> Option<usize> {
        self.var_factors[a].iter().copied().find(|&f| self.other_var(f, a) == b)
    }

    pub fn has_cycle(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.var_count).collect();
        for &[a, b] in &self.factors {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return true;
            }
            parent[ra] = rb;
        }
        false
    }

    /// Connected and acyclic.
    pub fn is_tree(&self) -> bool {
        self.factors.len() + 1 == self.var_count && !self.has_cycle()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton;

    #[test]
    fn two_joint_tree() {
        let g = build_tree(2, &[(0, 1)], &[]).unwrap();
        assert_eq!(g.edges_z().len(), 1);
        let fg = to_factor_graph(&g);
        assert_eq!((fg.var_count(), fg.factor_count()), (2, 1));
    }

    #[test]
    fn skeleton_tree() {
        let g = build_tree(skeleton::JOINT_COUNT, &skeleton::TREE_EDGES, &[]).unwrap();
        assert_eq!(g.edges_z().len(), 13);
        assert!(to_factor_graph(&g).is_tree());
        assert!(g.is_mirrored());
    }

    #[test]
    fn triangle_is_a_cycle() {
        let err = build_tree(3, &[(0, 1), (1, 2), (2, 0)], &[]).unwrap_err();
        assert!(matches!(err, Error::Cycle));
        assert_eq!(err.to_string(), "cycle detected");
    }

    #[test]
    fn disconnected_rejected() {
        assert!(matches!(build_tree(4, &[(0, 1), (2, 3)], &[]), Err(Error::Disconnected)));
    }

    #[test]
    fn duplicates_and_self_loops_rejected() {
        assert!(build_tree(2, &[(0, 1), (1, 0)], &[]).is_err());
        assert!(build_tree(2, &[(0, 0), (0, 1)], &[]).is_err());
    }

    #[test]
    fn interpolation_splices_chain() {
        let interp = Interpolation { a: 0, b: 1, count: 2, fractions: None };
        let g = build_tree(3, &[(0, 1), (1, 2)], &[interp]).unwrap();
        assert_eq!(g.len(), 5);
        assert!(!g.has_edge(0, 1));
        assert!(g.has_edge(0, 3) && g.has_edge(3, 4) && g.has_edge(4, 1));
        let pos = g.vertex_positions(&[(0.0, 0.0), (3.0, 6.0), (9.0, 9.0)]);
        assert!((pos[3].0 - 1.0).abs() < 1e-12 && (pos[3].1 - 2.0).abs() < 1e-12);
        assert!((pos[4].0 - 2.0).abs() < 1e-12 && (pos[4].1 - 4.0).abs() < 1e-12);
        assert_eq!(g.joint_count(), 3);
    }

    #[test]
    fn factor_graph_counts() {
        let star = build_tree(4, &[(0, 1), (0, 2), (0, 3)], &[]).unwrap();
        let fg = to_factor_graph(&star);
        assert_eq!((fg.var_count(), fg.factor_count()), (4, 3));
        assert_eq!(fg.var_factors(0).len(), 3);

        let single = build_tree(1, &[], &[]).unwrap();
        let fg = to_factor_graph(&single);
        assert_eq!((fg.var_count(), fg.factor_count()), (1, 0));
    }

    fn uniform_distances(n: usize, d: f64) -> PairDistances {
        let mut p = PairDistances::new();
        for i in 0..n {
            for j in i + 1..n {
                for _ in 0..10 {
                    p.push(i, j, d);
                }
            }
        }
        p
    }

    #[test]
    fn loopy_extremes() {
        let base = build_tree(4, &[(0, 1), (1, 2), (2, 3)], &[]).unwrap();
        let g = build_loopy(&base, &uniform_distances(4, 1e9), 0.9, 48.0).unwrap();
        assert_eq!(g.edges_h(), base.edges_h());
        let g = build_loopy(&base, &uniform_distances(4, 0.0), 0.9, 48.0).unwrap();
        assert_eq!(g.edges_h().len(), 6);
        assert_eq!(to_factor_graph(&g).factor_count(), 6);
        assert!(g.is_mirrored());
    }

    #[test]
    fn loopy_single_qualifying_pair() {
        let base = build_tree(4, &[(0, 1), (1, 2), (2, 3)], &[]).unwrap();
        let mut p = PairDistances::new();
        for i in 0..4 {
            for j in i + 1..4 {
                for k in 0..20 {
                    // pair (0, 2): 19 of 20 samples (95%) within radius
                    let d = if (i, j) == (0, 2) && k < 19 { 10.0 } else { 100.0 };
                    p.push(i, j, d);
                }
            }
        }
        let g = build_loopy(&base, &p, 0.9, 48.0).unwrap();
        assert_eq!(g.edges_h().len(), 4);
        assert!(g.has_edge(0, 2));
        // direct sort-and-index: ceil(0.9 * 20) = 18th smallest is 10
        assert_eq!(quantile(p.get(0, 2).unwrap(), 0.9), 10.0);
        assert_eq!(quantile(p.get(0, 3).unwrap(), 0.9), 100.0);
    }

    #[test]
    fn loopy_missing_distance() {
        let base = build_tree(3, &[(0, 1), (1, 2)], &[]).unwrap();
        let mut p = PairDistances::new();
        p.push(0, 1, 1.0);
        p.push(1, 2, 1.0);
        assert!(matches!(build_loopy(&base, &p, 0.9, 48.0), Err(Error::MissingDistance(0, 2))));
    }

    #[test]
    fn hop_distances_on_path() {
        let g = build_tree(4, &[(0, 1), (1, 2), (2, 3)], &[]).unwrap();
        assert_eq!(g.hop_distances(0), vec![Some(0), Some(1), Some(2), Some(3)]);
    }
}
