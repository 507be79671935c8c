use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::FactorGraph;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Serial,
    Flooding,
}

/// One directed message on the factor graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    VarToFactor { var: usize, factor: usize },
    FactorToVar { factor: usize, var: usize },
}

/// A message route. `steps` describes one serial pass or one flooding
/// round; the whole route repeats it `iterations` times.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub steps: Vec<Step>,
    pub iterations: usize,
    pub root: Option<usize>,
}

impl Schedule {
    pub fn with_iterations(mut self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::ZeroIterations);
        }
        self.iterations = m;
        Ok(self)
    }

    /// Directed variable-to-variable traversals in one pass (each is a
    /// variable->factor step followed by factor->variable).
    pub fn variable_edge_messages(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::FactorToVar { .. })).count()
    }

    /// Directed `(from, to)` variable pairs in firing order for one pass.
    pub fn directed_edges(&self, fg: &FactorGraph) -> Vec<(usize, usize)> {
        self.steps
            .iter()
            .filter_map(|s| match *s {
                Step::FactorToVar { factor, var } => Some((fg.other_var(factor, var), var)),
                Step::VarToFactor { .. } => None,
            })
            .collect()
    }

    /// Checks that every step names an existing variable/factor incidence.
    pub fn validate(&self, fg: &FactorGraph) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::ZeroIterations);
        }
        for s in &self.steps {
            let (var, factor) = match *s {
                Step::VarToFactor { var, factor } | Step::FactorToVar { factor, var } => (var, factor),
            };
            if var >= fg.var_count() || factor >= fg.factor_count() || !fg.var_factors(var).contains(&factor) {
                return Err(Error::IncompatibleSchedule(format!("{s:?} is not an edge of the factor graph")));
            }
        }
        match self.kind {
            ScheduleKind::Serial if !fg.is_tree() => {
                Err(Error::IncompatibleSchedule("serial routes are only defined on trees".into()))
            }
            ScheduleKind::Flooding => {
                let want = 2 * fg.factor_count();
                let got: HashSet<_> = self.steps.iter().collect();
                if got.len() != self.steps.len() || self.variable_edge_messages() != want || got.len() != 2 * want {
                    return Err(Error::IncompatibleSchedule("flooding round must cover every directed edge once".into()));
                }
                Ok(())
            }
            ScheduleKind::Serial => Ok(()),
        }
    }

    /// True when each step fires only after the messages it consumes:
    /// `v -> f` after every `f' -> v` with `f' != f`, and `f -> k` after
    /// `j -> f` from the factor's other endpoint.
    pub fn respects_dependencies(&self, fg: &FactorGraph) -> bool {
        let mut fired = HashSet::new();
        for &s in &self.steps {
            let ok = match s {
                Step::VarToFactor { var, factor } => fg
                    .var_factors(var)
                    .iter()
                    .filter(|&&f| f != factor)
                    .all(|&f| fired.contains(&Step::FactorToVar { factor: f, var })),
                Step::FactorToVar { factor, var } => {
                    fired.contains(&Step::VarToFactor { var: fg.other_var(factor, var), factor })
                }
            };
            if !ok {
                return false;
            }
            fired.insert(s);
        }
        true
    }
}

/// Two-sweep sum-product route: leaves to `root`, then `root` to leaves.
pub fn plan_serial_route(fg: &FactorGraph, root: usize) -> Result<Schedule> {
    if root >= fg.var_count() {
        return Err(Error::Graph(format!("root {root} out of range")));
    }
    if !fg.is_tree() {
        return Err(if fg.has_cycle() { Error::Cycle } else { Error::Disconnected });
    }
    // (vertex, factor to parent) in DFS pre-order
    let mut order = Vec::with_capacity(fg.var_count());
    let mut stack = vec![(root, None::<usize>)];
    while let Some((v, up)) = stack.pop() {
        order.push((v, up));
        let mut children: Vec<_> = fg.var_factors(v).iter().filter(|&&f| Some(f) != up).map(|&f| (fg.other_var(f, v), Some(f))).collect();
        children.reverse();
        stack.extend(children);
    }
    let mut up_steps = Vec::new();
    let mut post = Vec::new();
    post_order(fg, root, None, &mut post);
    for (v, f) in post {
        let parent = fg.other_var(f, v);
        up_steps.push(Step::VarToFactor { var: v, factor: f });
        up_steps.push(Step::FactorToVar { factor: f, var: parent });
    }
    let mut steps = up_steps;
    for &(v, up) in &order {
        if let Some(f) = up {
            let parent = fg.other_var(f, v);
            steps.push(Step::VarToFactor { var: parent, factor: f });
            steps.push(Step::FactorToVar { factor: f, var: v });
        }
    }
    Ok(Schedule { kind: ScheduleKind::Serial, steps, iterations: 1, root: Some(root) })
}

/// Non-root vertices with their parent factor, children before parents.
fn post_order(fg: &FactorGraph, v: usize, up: Option<usize>, out: &mut Vec<(usize, usize)>) {
    for &f in fg.var_factors(v) {
        if Some(f) != up {
            post_order(fg, fg.other_var(f, v), Some(f), out);
        }
    }
    if let Some(f) = up {
        out.push((v, f));
    }
}

/// `m` synchronous rounds, each covering every directed edge once.
pub fn plan_flooding(fg: &FactorGraph, m: usize) -> Result<Schedule> {
    if m == 0 {
        return Err(Error::ZeroIterations);
    }
    let mut steps = Vec::with_capacity(4 * fg.factor_count());
    for f in 0..fg.factor_count() {
        for v in fg.factor_vars(f) {
            steps.push(Step::VarToFactor { var: v, factor: f });
        }
    }
    for f in 0..fg.factor_count() {
        for v in fg.factor_vars(f) {
            steps.push(Step::FactorToVar { factor: f, var: v });
        }
    }
    Ok(Schedule { kind: ScheduleKind::Flooding, steps, iterations: m, root: None })
}
