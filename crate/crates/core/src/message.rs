//! Convolutional message passing among feature groups.
//!
//! Each factor-graph variable is a feature group: an `[L, H, W]` map.
//! Messages follow the factor-graph route of a [`Schedule`]:
//!
//! - variable to factor: `F(j->f) = U_j + sum F(f'->j)` over the other
//!   factors of `j`, then `Q(j->f) = tau(-F(j->f))`;
//! - factor to variable: `F(f->k) = Q(j->f) (*) w(j->k)`, where `j` is the
//!   factor's other endpoint;
//! - beliefs: `Q(h_k) = tau(U_k + sum F(f->k))` over all factors of `k`.
//!
//! Flooding rounds instead update every belief at once from the previous
//! round's beliefs: `Q_{t+1}(h_i) = tau(U_i + sum Q_t(h_i') (*) w(i'->i))`,
//! starting from `Q_0(h_i) = tau(U_i)`.
//!
//! `F` messages and unaries are energies; `Q` messages and beliefs are
//! normalized scores. Everything is recorded on a [`Tape`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FactorGraph, Schedule, ScheduleKind, Step};
use crate::params::KernelVars;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Nonlinearity applied to messages and beliefs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Tau {
    /// `beta * softmax(alpha * x)` across channels.
    ScaledSoftmax { alpha: f64, beta: f64 },
    Relu,
}

impl Tau {
    /// `alpha = 0.5`, `beta = channels`.
    pub fn default_softmax(channels: usize) -> Self {
        Tau::ScaledSoftmax { alpha: 0.5, beta: channels as f64 }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match *self {
            Tau::ScaledSoftmax { alpha, beta } => tape.scaled_softmax(x, alpha, beta),
            Tau::Relu => tape.relu(x),
        }
    }
}

/// Per-variable unary maps `U_i`, all `[L, H, W]`.
#[derive(Clone, Debug)]
pub struct UnaryMaps {
    pub maps: Vec<Var>,
    pub dims: [usize; 3],
}

impl UnaryMaps {
    pub fn new(tape: &Tape, maps: Vec<Var>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::Shape("no unary maps".into()))?;
        let (l, h, w) = tape.value(*first).chw()?;
        for &m in &maps {
            if tape.value(m).dims() != [l, h, w] {
                return Err(Error::Shape(format!("unary maps disagree: {:?} vs {:?}", tape.value(m).dims(), [l, h, w])));
            }
        }
        Ok(UnaryMaps { maps, dims: [l, h, w] })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// `U_k = f (*) w_k` for every variable `k`.
pub fn init_unaries(tape: &mut Tape, f: Var, unary_kernels: &[KernelVars], var_count: usize) -> Result<UnaryMaps> {
    if unary_kernels.len() != var_count {
        return Err(Error::Shape(format!("{} unary kernels for {var_count} variables", unary_kernels.len())));
    }
    let maps = unary_kernels.iter().map(|k| tape.conv2d(f, k.w, k.b)).collect::<Result<Vec<_>>>()?;
    UnaryMaps::new(tape, maps)
}

/// Directed pairwise kernels `w(j->k)`, one set per iteration unless shared.
#[derive(Clone, Debug)]
pub struct PairwiseKernels {
    per_iteration: Vec<HashMap<(usize, usize), KernelVars>>,
}

impl PairwiseKernels {
    /// One kernel set referenced by every iteration.
    pub fn shared(kernels: HashMap<(usize, usize), KernelVars>) -> Self {
        PairwiseKernels { per_iteration: vec![kernels] }
    }

    /// Independent kernel sets for iterations `0..sets.len()`.
    pub fn unshared(sets: Vec<HashMap<(usize, usize), KernelVars>>) -> Self {
        PairwiseKernels { per_iteration: sets }
    }

    pub fn is_shared(&self) -> bool {
        self.per_iteration.len() == 1
    }

    pub fn get(&self, iteration: usize, from: usize, to: usize) -> Result<KernelVars> {
        let set = if self.is_shared() { &self.per_iteration[0] } else { self.per_iteration.get(iteration).ok_or(Error::MissingKernel(from, to))? };
        set.get(&(from, to)).copied().ok_or(Error::MissingKernel(from, to))
    }
}

/// Messages of one run, keyed by directed factor-graph edge.
#[derive(Clone, Debug)]
pub struct MessageState {
    /// `F(j->f)` and `F(f->k)`.
    pub f: HashMap<Step, Var>,
    /// `Q(j->f)`, keyed by the matching `VarToFactor` step.
    pub q: HashMap<Step, Var>,
    dims: [usize; 3],
    zero: Option<Var>,
    uniform: Option<Var>,
}

impl MessageState {
    pub fn new(dims: [usize; 3]) -> Self {
        MessageState { f: HashMap::new(), q: HashMap::new(), dims, zero: None, uniform: None }
    }

    fn zero(&mut self, tape: &mut Tape) -> Var {
        *self.zero.get_or_insert_with(|| tape.constant(Tensor::zeros(&self.dims)))
    }

    /// `F` message, zero if it has not fired yet.
    fn f_or_zero(&mut self, tape: &mut Tape, step: Step) -> Var {
        match self.f.get(&step) {
            Some(&v) => v,
            None => self.zero(tape),
        }
    }

    /// `Q` message, `tau(0)` (uniform for the scaled softmax) if it has not fired yet.
    fn q_or_uniform(&mut self, tape: &mut Tape, step: Step, tau: Tau) -> Result<Var> {
        if let Some(&v) = self.q.get(&step) {
            return Ok(v);
        }
        if let Some(u) = self.uniform {
            return Ok(u);
        }
        let z = self.zero(tape);
        let u = tau.apply(tape, z)?;
        self.uniform = Some(u);
        Ok(u)
    }
}

/// Named intermediate values, for debug dumps (`Q/<joint>/<step>`).
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub entries: Vec<(String, Var)>,
}

fn record(trace: &mut Option<&mut Trace>, name: impl FnOnce() -> String, v: Var) {
    if let Some(t) = trace.as_deref_mut() {
        t.entries.push((name(), v));
    }
}

fn check_shape(tape: &Tape, v: Var, dims: [usize; 3]) -> Result<()> {
    if tape.value(v).dims() != dims {
        return Err(Error::Shape(format!("message {:?} vs expected {dims:?}", tape.value(v).dims())));
    }
    Ok(())
}

/// Fires `j -> f_k`: sums `U_j` with incoming factor messages except from `f_k`, then normalizes.
pub fn variable_to_factor(
    tape: &mut Tape,
    state: &mut MessageState,
    fg: &FactorGraph,
    unaries: &UnaryMaps,
    j: usize,
    fk: usize,
    tau: Tau,
) -> Result<Var> {
    let mut terms = vec![unaries.maps[j]];
    for &fp in fg.var_factors(j) {
        if fp != fk {
            let key = Step::FactorToVar { factor: fp, var: j };
            terms.push(state.f_or_zero(tape, key));
        }
    }
    let f = if terms.len() == 1 { terms[0] } else { tape.add(&terms)? };
    check_shape(tape, f, state.dims)?;
    let neg = tape.neg(f)?;
    let q = tau.apply(tape, neg)?;
    let key = Step::VarToFactor { var: j, factor: fk };
    state.f.insert(key, f);
    state.q.insert(key, q);
    Ok(q)
}

/// Fires `f_j -> k`: convolves the opposite endpoint's `Q` with `w(p->k)`.
pub fn factor_to_variable(
    tape: &mut Tape,
    state: &mut MessageState,
    fg: &FactorGraph,
    fj: usize,
    k: usize,
    kernels: &PairwiseKernels,
    iteration: usize,
    tau: Tau,
) -> Result<Var> {
    let p = fg.other_var(fj, k);
    let kv = kernels.get(iteration, p, k)?;
    let q = state.q_or_uniform(tape, Step::VarToFactor { var: p, factor: fj }, tau)?;
    let f = tape.conv2d(q, kv.w, kv.b)?;
    check_shape(tape, f, state.dims)?;
    state.f.insert(Step::FactorToVar { factor: fj, var: k }, f);
    Ok(f)
}

/// `Q(h_k) = tau(U_k + sum F(f->k))` for every variable.
pub fn beliefs(tape: &mut Tape, state: &mut MessageState, fg: &FactorGraph, unaries: &UnaryMaps, tau: Tau) -> Result<Vec<Var>> {
    (0..fg.var_count())
        .map(|k| {
            let mut terms = vec![unaries.maps[k]];
            for &fp in fg.var_factors(k) {
                terms.push(state.f_or_zero(tape, Step::FactorToVar { factor: fp, var: k }));
            }
            let x = if terms.len() == 1 { terms[0] } else { tape.add(&terms)? };
            tau.apply(tape, x)
        })
        .collect()
}

/// One synchronous round: every belief is recomputed from the previous round's beliefs.
pub fn flooding_update(
    tape: &mut Tape,
    beliefs_t: &[Var],
    unaries: &UnaryMaps,
    fg: &FactorGraph,
    kernels: &PairwiseKernels,
    iteration: usize,
    tau: Tau,
) -> Result<Vec<Var>> {
    (0..fg.var_count())
        .map(|i| {
            let mut terms = vec![unaries.maps[i]];
            for &f in fg.var_factors(i) {
                let src = fg.other_var(f, i);
                let kv = kernels.get(iteration, src, i)?;
                terms.push(tape.conv2d(beliefs_t[src], kv.w, kv.b)?);
            }
            let x = if terms.len() == 1 { terms[0] } else { tape.add(&terms)? };
            tau.apply(tape, x)
        })
        .collect()
}

/// Runs a schedule from precomputed unaries and returns per-variable beliefs.
pub fn propagate(
    tape: &mut Tape,
    unaries: &UnaryMaps,
    fg: &FactorGraph,
    schedule: &Schedule,
    kernels: &PairwiseKernels,
    tau: Tau,
    mut trace: Option<&mut Trace>,
    names: &[String],
) -> Result<Vec<Var>> {
    schedule.validate(fg)?;
    if unaries.len() != fg.var_count() {
        return Err(Error::IncompatibleSchedule(format!("{} unaries for {} variables", unaries.len(), fg.var_count())));
    }
    let label = |v: usize| names.get(v).cloned().unwrap_or_else(|| v.to_string());
    match schedule.kind {
        ScheduleKind::Serial => {
            let mut state = MessageState::new(unaries.dims);
            let mut counter = 0usize;
            for m in 0..schedule.iterations {
                for &step in &schedule.steps {
                    match step {
                        Step::VarToFactor { var, factor } => {
                            let q = variable_to_factor(tape, &mut state, fg, unaries, var, factor, tau)?;
                            record(&mut trace, || format!("Q/{}/{counter}", label(var)), q);
                        }
                        Step::FactorToVar { factor, var } => {
                            factor_to_variable(tape, &mut state, fg, factor, var, kernels, m, tau)?;
                        }
                    }
                    counter += 1;
                }
            }
            let out = beliefs(tape, &mut state, fg, unaries, tau)?;
            for (k, &b) in out.iter().enumerate() {
                record(&mut trace, || format!("Q/{}/final", label(k)), b);
            }
            Ok(out)
        }
        ScheduleKind::Flooding => {
            let mut q = unaries.maps.iter().map(|&u| tau.apply(tape, u)).collect::<Result<Vec<_>>>()?;
            for (k, &b) in q.iter().enumerate() {
                record(&mut trace, || format!("Q/{}/0", label(k)), b);
            }
            for t in 0..schedule.iterations {
                q = flooding_update(tape, &q, unaries, fg, kernels, t, tau)?;
                for (k, &b) in q.iter().enumerate() {
                    record(&mut trace, || format!("Q/{}/{}", label(k), t + 1), b);
                }
            }
            for (k, &b) in q.iter().enumerate() {
                record(&mut trace, || format!("Q/{}/final", label(k)), b);
            }
            Ok(q)
        }
    }
}

/// Unary initialization followed by [`propagate`].
#[allow(clippy::too_many_arguments)]
pub fn run_schedule(
    tape: &mut Tape,
    f: Var,
    fg: &FactorGraph,
    schedule: &Schedule,
    kernels: &PairwiseKernels,
    unary_kernels: &[KernelVars],
    tau: Tau,
    trace: Option<&mut Trace>,
    names: &[String],
) -> Result<Vec<Var>> {
    let unaries = init_unaries(tape, f, unary_kernels, fg.var_count())?;
    propagate(tape, &unaries, fg, schedule, kernels, tau, trace, names)
}
