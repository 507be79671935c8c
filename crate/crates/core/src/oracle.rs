//! Small discrete CRFs with exact inference, used as ground truth.
//!
//! A [`DiscreteCRF`] has joint variables `z_i` and latent feature variables
//! `h_k`, with energies
//!
//! ```text
//! En(z, h) = sum psi_h(h_k, h_l)   over E_h
//!          + sum psi_z(z_i, z_j)   over E_z
//!          + sum psi_zh(z_i, h_k)  over E_zh
//!          + sum phi_h(h_k)
//! ```
//!
//! and Gibbs distribution `p ∝ exp(-En)`. Model 1 drops `E_z` and `E_h`,
//! model 2 drops `E_h`. Potentials are stored as energies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_tree, plan_serial_route, to_factor_graph, Step};
use crate::ops::log_sum_exp;

pub const MAX_STATE_SPACE: u128 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Model1,
    Model2,
    Full,
}

/// Pairwise energy table `table[state_a][state_b]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub a: usize,
    pub b: usize,
    pub table: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCRF {
    pub kind: ModelKind,
    pub z_states: Vec<usize>,
    pub h_states: Vec<usize>,
    /// Unary energies `phi_h[k][state]`.
    pub phi_h: Vec<Vec<f64>>,
    /// `E_zh`: `a` indexes z, `b` indexes h.
    pub psi_zh: Vec<PairTerm>,
    /// `E_z` over joint variables.
    #[serde(default)]
    pub psi_z: Vec<PairTerm>,
    /// `E_h` over feature variables.
    #[serde(default)]
    pub psi_h: Vec<PairTerm>,
}

/// A flat variable index: all z variables first, then all h variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarId {
    Z(usize),
    H(usize),
}

/// Flattened pairwise model used by the inference routines.
#[derive(Clone, Debug)]
struct Mrf {
    states: Vec<usize>,
    unary: Vec<Vec<f64>>,
    /// Merged pair terms, `a < b`, `table[s_a][s_b]`.
    pairs: Vec<(usize, usize, Vec<Vec<f64>>)>,
}

impl Mrf {
    fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        // (pair index, other variable, v is the `a` side)
        self.pairs.iter().enumerate().filter_map(move |(p, &(a, b, _))| {
            if a == v {
                Some((p, b, true))
            } else if b == v {
                Some((p, a, false))
            } else {
                None
            }
        })
    }

    fn pair_energy(&self, p: usize, v_is_a: bool, s_v: usize, s_other: usize) -> f64 {
        let t = &self.pairs[p].2;
        if v_is_a {
            t[s_v][s_other]
        } else {
            t[s_other][s_v]
        }
    }

    fn energy(&self, x: &[usize]) -> f64 {
        let u: f64 = x.iter().enumerate().map(|(v, &s)| self.unary[v][s]).sum();
        u + self.pairs.iter().map(|(a, b, t)| t[x[*a]][x[*b]]).sum::<f64>()
    }

    fn state_space(&self) -> u128 {
        self.states.iter().map(|&s| s as u128).product()
    }
}

fn check_table(t: &[Vec<f64>], rows: usize, cols: usize, what: &str) -> Result<()> {
    if t.len() != rows || t.iter().any(|r| r.len() != cols) {
        return Err(Error::Crf(format!("{what}: expected a {rows}x{cols} table")));
    }
    if t.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Crf(format!("{what}: non-finite potential")));
    }
    Ok(())
}

impl DiscreteCRF {
    pub fn validate(&self) -> Result<()> {
        if self.z_states.iter().chain(&self.h_states).any(|&s| s == 0) {
            return Err(Error::Crf("every variable needs at least one state".into()));
        }
        if self.phi_h.len() != self.h_states.len() {
            return Err(Error::Crf("one unary table per h variable".into()));
        }
        for (k, u) in self.phi_h.iter().enumerate() {
            check_table(std::slice::from_ref(u), 1, self.h_states[k], &format!("phi_h[{k}]"))?;
        }
        match self.kind {
            ModelKind::Model1 if !self.psi_z.is_empty() || !self.psi_h.is_empty() => {
                return Err(Error::Crf("model1 has no E_z or E_h terms".into()))
            }
            ModelKind::Model2 if !self.psi_h.is_empty() => return Err(Error::Crf("model2 has no E_h terms".into())),
            _ => {}
        }
        let nz = self.z_states.len();
        let nh = self.h_states.len();
        for t in &self.psi_zh {
            if t.a >= nz || t.b >= nh {
                return Err(Error::Crf(format!("E_zh term ({}, {}) out of range", t.a, t.b)));
            }
            check_table(&t.table, self.z_states[t.a], self.h_states[t.b], "psi_zh")?;
        }
        for (terms, states, what) in [(&self.psi_z, &self.z_states, "psi_z"), (&self.psi_h, &self.h_states, "psi_h")] {
            for t in terms {
                if t.a >= states.len() || t.b >= states.len() || t.a == t.b {
                    return Err(Error::Crf(format!("{what} term ({}, {}) invalid", t.a, t.b)));
                }
                check_table(&t.table, states[t.a], states[t.b], what)?;
            }
        }
        Ok(())
    }

    pub fn var_count(&self) -> usize {
        self.z_states.len() + self.h_states.len()
    }

    pub fn flat(&self, v: VarId) -> usize {
        match v {
            VarId::Z(i) => i,
            VarId::H(k) => self.z_states.len() + k,
        }
    }

    fn mrf(&self) -> Result<Mrf> {
        self.validate()?;
        let nz = self.z_states.len();
        let mut states = self.z_states.clone();
        states.extend(&self.h_states);
        let mut unary: Vec<Vec<f64>> = self.z_states.iter().map(|&s| vec![0.0; s]).collect();
        unary.extend(self.phi_h.iter().cloned());

        let mut pairs: Vec<(usize, usize, Vec<Vec<f64>>)> = Vec::new();
        let mut add = |a: usize, b: usize, t: &[Vec<f64>]| {
            let (lo, hi, swapped) = if a < b { (a, b, false) } else { (b, a, true) };
            let oriented: Vec<Vec<f64>> = if swapped {
                (0..t[0].len()).map(|j| (0..t.len()).map(|i| t[i][j]).collect()).collect()
            } else {
                t.to_vec()
            };
            match pairs.iter_mut().find(|(x, y, _)| (*x, *y) == (lo, hi)) {
                Some((_, _, acc)) => {
                    for (ra, rb) in acc.iter_mut().zip(&oriented) {
                        for (x, y) in ra.iter_mut().zip(rb) {
                            *x += y;
                        }
                    }
                }
                None => pairs.push((lo, hi, oriented)),
            }
        };
        for t in &self.psi_zh {
            add(t.a, nz + t.b, &t.table);
        }
        if self.kind != ModelKind::Model1 {
            for t in &self.psi_z {
                add(t.a, t.b, &t.table);
            }
        }
        if self.kind == ModelKind::Full {
            for t in &self.psi_h {
                add(nz + t.a, nz + t.b, &t.table);
            }
        }
        Ok(Mrf { states, unary, pairs })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let crf: DiscreteCRF = serde_json::from_str(text)?;
        crf.validate()?;
        Ok(crf)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("CRF serializes")
    }
}

/// Energy of the assignment `(z, h)` under the terms active for the model kind.
pub fn energy(crf: &DiscreteCRF, z: &[usize], h: &[usize]) -> Result<f64> {
    crf.validate()?;
    if z.len() != crf.z_states.len() || h.len() != crf.h_states.len() {
        return Err(Error::Crf("assignment length does not match variable count".into()));
    }
    for (i, (&s, &n)) in z.iter().zip(&crf.z_states).enumerate() {
        if s >= n {
            return Err(Error::StateOutOfRange { var: format!("z{i}"), state: s, count: n });
        }
    }
    for (k, (&s, &n)) in h.iter().zip(&crf.h_states).enumerate() {
        if s >= n {
            return Err(Error::StateOutOfRange { var: format!("h{k}"), state: s, count: n });
        }
    }
    let mut e: f64 = h.iter().enumerate().map(|(k, &s)| crf.phi_h[k][s]).sum();
    e += crf.psi_zh.iter().map(|t| t.table[z[t.a]][h[t.b]]).sum::<f64>();
    if crf.kind != ModelKind::Model1 {
        e += crf.psi_z.iter().map(|t| t.table[z[t.a]][z[t.b]]).sum::<f64>();
    }
    if crf.kind == ModelKind::Full {
        e += crf.psi_h.iter().map(|t| t.table[h[t.a]][h[t.b]]).sum::<f64>();
    }
    Ok(e)
}

/// Exact joint distribution over all variables, row-major over the flat
/// variable order (z first, then h).
#[derive(Clone, Debug)]
pub struct Distribution {
    pub states: Vec<usize>,
    pub probs: Vec<f64>,
    pub log_z: f64,
}

impl Distribution {
    /// Decodes a flat table index into per-variable states.
    pub fn assignment(&self, mut index: usize) -> Vec<usize> {
        let mut x = vec![0; self.states.len()];
        for v in (0..self.states.len()).rev() {
            x[v] = index % self.states[v];
            index /= self.states[v];
        }
        x
    }

    pub fn marginal(&self, v: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.states[v]];
        let stride: usize = self.states[v + 1..].iter().product();
        for (i, &p) in self.probs.iter().enumerate() {
            m[(i / stride) % self.states[v]] += p;
        }
        m
    }
}

/// Odometer over all assignments, calling `f(index, assignment)`.
fn enumerate(states: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let mut x = vec![0usize; states.len()];
    let total: usize = states.iter().product();
    for idx in 0..total {
        f(idx, &x);
        for v in (0..states.len()).rev() {
            x[v] += 1;
            if x[v] < states[v] {
                break;
            }
            x[v] = 0;
        }
    }
}

fn joint_of(m: &Mrf) -> Result<Distribution> {
    let size = m.state_space();
    if size > MAX_STATE_SPACE {
        return Err(Error::StateSpaceTooLarge(size));
    }
    let mut neg_e = vec![0.0; size as usize];
    enumerate(&m.states, |i, x| neg_e[i] = -m.energy(x));
    let log_z = log_sum_exp(&neg_e);
    let probs = neg_e.iter().map(|&v| (v - log_z).exp()).collect();
    Ok(Distribution { states: m.states.clone(), probs, log_z })
}

/// `p(z, h) = exp(-En) / Z` by enumeration.
pub fn brute_force_joint(crf: &DiscreteCRF) -> Result<Distribution> {
    joint_of(&crf.mrf()?)
}

/// Marginal of one variable by summing the enumerated joint.
pub fn brute_force_marginal(crf: &DiscreteCRF, v: VarId) -> Result<Vec<f64>> {
    let idx = crf.flat(v);
    if idx >= crf.var_count() || matches!(v, VarId::Z(i) if i >= crf.z_states.len()) {
        return Err(Error::Crf(format!("no variable {v:?}")));
    }
    Ok(brute_force_joint(crf)?.marginal(idx))
}

fn normalize_log(v: &mut [f64]) {
    let lse = log_sum_exp(v);
    for x in v.iter_mut() {
        *x -= lse;
    }
}

/// Exact marginals of every variable (flat order) by two-sweep sum-product
/// on each connected component.
pub fn tree_sum_product(crf: &DiscreteCRF) -> Result<Vec<Vec<f64>>> {
    sum_product_scaled(crf, &|_| 1.0)
}

/// Sum-product where each variable-to-factor message is multiplied by `scale(step)`.
pub(crate) fn sum_product_scaled(crf: &DiscreteCRF, scale: &dyn Fn(Step) -> f64) -> Result<Vec<Vec<f64>>> {
    let m = crf.mrf()?;
    let n = m.states.len();
    let mut comp = vec![usize::MAX; n];
    let mut out = vec![Vec::new(); n];
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        // collect the component
        let mut members = vec![start];
        comp[start] = start;
        let mut i = 0;
        while i < members.len() {
            let v = members[i];
            for (_, u, _) in m.neighbors(v) {
                if comp[u] == usize::MAX {
                    comp[u] = start;
                    members.push(u);
                }
            }
            i += 1;
        }
        members.sort_unstable();
        let local = |v: usize| members.binary_search(&v).expect("member");
        let pair_ids: Vec<usize> = (0..m.pairs.len()).filter(|&p| comp[m.pairs[p].0] == start).collect();
        let edges: Vec<(usize, usize)> = pair_ids.iter().map(|&p| (local(m.pairs[p].0), local(m.pairs[p].1))).collect();
        let g = build_tree(members.len(), &edges, &[])?;
        let fg = to_factor_graph(&g);
        let route = plan_serial_route(&fg, 0)?;
        // factor f of `fg` corresponds to the pair with the same local endpoints
        let factor_pair: Vec<usize> = (0..fg.factor_count())
            .map(|f| {
                let [a, b] = fg.factor_vars(f);
                let idx = edges.iter().position(|&e| e == (a.min(b), a.max(b))).expect("factor edge");
                pair_ids[idx]
            })
            .collect();

        let mut v2f: std::collections::HashMap<Step, Vec<f64>> = Default::default();
        let mut f2v: std::collections::HashMap<Step, Vec<f64>> = Default::default();
        for &step in &route.steps {
            match step {
                Step::VarToFactor { var, factor } => {
                    let gv = members[var];
                    let mut msg: Vec<f64> = m.unary[gv].iter().map(|e| -e).collect();
                    for &f in fg.var_factors(var) {
                        if f != factor {
                            let inc = &f2v[&Step::FactorToVar { factor: f, var }];
                            msg.iter_mut().zip(inc).for_each(|(a, b)| *a += b);
                        }
                    }
                    normalize_log(&mut msg);
                    let ln_s = scale(step).ln();
                    msg.iter_mut().for_each(|x| *x += ln_s);
                    v2f.insert(step, msg);
                }
                Step::FactorToVar { factor, var } => {
                    let src = fg.other_var(factor, var);
                    let (gsrc, gdst) = (members[src], members[var]);
                    let p = factor_pair[factor];
                    let src_is_a = m.pairs[p].0 == gsrc;
                    let inc = &v2f[&Step::VarToFactor { var: src, factor }];
                    let msg: Vec<f64> = (0..m.states[gdst])
                        .map(|t| {
                            let terms: Vec<f64> =
                                (0..m.states[gsrc]).map(|s| inc[s] - m.pair_energy(p, src_is_a, s, t)).collect();
                            log_sum_exp(&terms)
                        })
                        .collect();
                    f2v.insert(step, msg);
                }
            }
        }
        for (lv, &gv) in members.iter().enumerate() {
            let mut b: Vec<f64> = m.unary[gv].iter().map(|e| -e).collect();
            for &f in fg.var_factors(lv) {
                let inc = &f2v[&Step::FactorToVar { factor: f, var: lv }];
                b.iter_mut().zip(inc).for_each(|(a, c)| *a += c);
            }
            normalize_log(&mut b);
            out[gv] = b.iter().map(|x| x.exp()).collect();
        }
    }
    Ok(out)
}

fn softmax_neg(energies: &[f64]) -> Vec<f64> {
    let mut l: Vec<f64> = energies.iter().map(|e| -e).collect();
    normalize_log(&mut l);
    l.iter().map(|x| x.exp()).collect()
}

/// Naive mean field: `iterations` sweeps of coordinate updates in ascending
/// variable order, starting from uniform `Q`. Returns `Q` in flat order.
pub fn mean_field_fixed_point(crf: &DiscreteCRF, iterations: usize) -> Result<Vec<Vec<f64>>> {
    let m = crf.mrf()?;
    let mut q: Vec<Vec<f64>> = m.states.iter().map(|&s| vec![1.0 / s as f64; s]).collect();
    for _ in 0..iterations {
        for v in 0..m.states.len() {
            let e: Vec<f64> = (0..m.states[v])
                .map(|s| {
                    m.unary[v][s]
                        + m.neighbors(v)
                            .map(|(p, u, v_is_a)| (0..m.states[u]).map(|t| q[u][t] * m.pair_energy(p, v_is_a, s, t)).sum::<f64>())
                            .sum::<f64>()
                })
                .collect();
            q[v] = softmax_neg(&e);
        }
    }
    Ok(q)
}

/// `KL(Q || p)` for a fully factorized `Q` against an enumerated joint.
pub fn kl_divergence(q: &[Vec<f64>], joint: &Distribution) -> f64 {
    let mut kl = 0.0;
    enumerate(&joint.states, |i, x| {
        let qx: f64 = x.iter().enumerate().map(|(v, &s)| q[v][s]).product();
        if qx > 0.0 {
            kl += qx * (qx.ln() - joint.probs[i].ln());
        }
    });
    kl
}

/// `E[h_k]` for every h variable, with `h_k` read as a 1-of-L indicator:
/// the exact marginal vector.
pub fn expected_h(crf: &DiscreteCRF) -> Result<Vec<Vec<f64>>> {
    let joint = brute_force_joint(crf)?;
    Ok((0..crf.h_states.len()).map(|k| joint.marginal(crf.flat(VarId::H(k)))).collect())
}

/// `E[h]` of a binary variable in `{0, 1}` from its marginal.
pub fn expected_binary(marginal: &[f64]) -> f64 {
    assert_eq!(marginal.len(), 2, "binary variable expected");
    marginal[1]
}

fn random_table(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

/// Random instance whose variable graph is a tree: `E_h` (or `E_z`) is a
/// random tree over `n` groups and each `z_i` hangs off `h_i`.
pub fn random_tree_crf(rng: &mut impl Rng, n: usize, z_states: usize, h_states: usize, tree_on_h: bool) -> DiscreteCRF {
    let tree: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    let zs: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=z_states)).collect();
    let hs: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=h_states)).collect();
    let phi_h = hs.iter().map(|&s| random_table(rng, 1, s, 2.0).remove(0)).collect();
    let psi_zh = (0..n).map(|i| PairTerm { a: i, b: i, table: random_table(rng, zs[i], hs[i], 2.0) }).collect();
    let terms = |rng: &mut _, st: &[usize]| -> Vec<PairTerm> {
        tree.iter().map(|&(a, b)| PairTerm { a, b, table: random_table(rng, st[a], st[b], 2.0) }).collect()
    };
    let (kind, psi_z, psi_h) = if tree_on_h {
        (ModelKind::Full, Vec::new(), terms(rng, &hs))
    } else {
        (ModelKind::Model2, terms(rng, &zs), Vec::new())
    };
    DiscreteCRF { kind, z_states: zs, h_states: hs, phi_h, psi_zh, psi_z, psi_h }
}
