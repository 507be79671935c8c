//! Reverse-mode differentiation over a linear record of tensor ops.
//!
//! Every op appends a node holding its output value. [`Tape::backward`]
//! walks the nodes in exact reverse order, so a node's gradient is complete
//! before it is propagated to its inputs. A variable used several times
//! (shared kernels, for instance) accumulates one contribution per use.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom};
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU32 = AtomicU32::new(0);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    Neg(Var),
    Scale(Var, f64),
    Add(Vec<Var>),
    ScaledSoftmax { x: Var, alpha: f64, beta: f64 },
    AvgPool { x: Var, k: usize },
    SumAll(Var),
    SpatialNll { logits: Var, target: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape(v.index));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var { index: self.nodes.len() - 1, tape: self.id })
    }

    /// Records a differentiable input (parameter or probed input).
    pub fn var(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var { index: self.nodes.len() - 1, tape: self.id }
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var { index: self.nodes.len() - 1, tape: self.id }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("variable belongs to a different tape");
        &self.nodes[v.index].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let xv = &self.nodes[x.index].value;
        let wv = &self.nodes[w.index].value;
        let g = ConvGeom::new(xv, wv)?;
        let bias = match b {
            Some(b) => {
                self.check(b)?;
                let bv = self.nodes[b.index].value.data();
                if bv.len() != g.c_out {
                    return Err(Error::Shape(format!("bias has {} values for {} outputs", bv.len(), g.c_out)));
                }
                Some(bv)
            }
            None => None,
        };
        let out = ops::conv2d_forward(&g, xv.data(), wv.data(), bias);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Tensor::from_parts(vec![g.c_out, g.h, g.w], out), Op::Conv2d { x, w, b }, &inputs, "conv2d")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = ops::relu(&self.nodes[x.index].value);
        self.push(y, Op::Relu(x), &[x], "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = ops::sigmoid(&self.nodes[x.index].value);
        self.push(y, Op::Sigmoid(x), &[x], "sigmoid")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = self.nodes[x.index].value.map(|v| -v);
        self.push(y, Op::Neg(x), &[x], "neg")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.check(x)?;
        let y = self.nodes[x.index].value.map(|v| v * s);
        self.push(y, Op::Scale(x, s), &[x], "scale")
    }

    /// Elementwise sum of one or more same-shaped values.
    pub fn add(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Shape("add of an empty list".into()));
        };
        for &x in xs {
            self.check(x)?;
        }
        let mut acc = self.nodes[first.index].value.clone();
        for &x in &xs[1..] {
            acc.add_scaled(&self.nodes[x.index].value, 1.0)?;
        }
        self.push(acc, Op::Add(xs.to_vec()), xs, "add")
    }

    pub fn scaled_softmax(&mut self, x: Var, alpha: f64, beta: f64) -> Result<Var> {
        self.check(x)?;
        let y = ops::scaled_softmax(&self.nodes[x.index].value, alpha, beta)?;
        self.push(y, Op::ScaledSoftmax { x, alpha, beta }, &[x], "scaled_softmax")
    }

    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        self.check(x)?;
        let y = ops::avg_pool(&self.nodes[x.index].value, k)?;
        self.push(y, Op::AvgPool { x, k }, &[x], "avg_pool")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.nodes[x.index].value.sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x], "sum")
    }

    /// Negative log-probability of cell `target` under a softmax over all cells of `logits`.
    pub fn spatial_nll(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.check(logits)?;
        let l = &self.nodes[logits.index].value;
        if target >= l.len() {
            return Err(Error::Shape(format!("target cell {target} outside map of {} cells", l.len())));
        }
        let nll = ops::log_sum_exp(l.data()) - l.data()[target];
        self.push(Tensor::scalar(nll), Op::SpatialNll { logits, target }, &[logits], "spatial_nll")
    }

    /// Gradients of the scalar `loss` w.r.t. every recorded value that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let lv = &self.nodes[loss.index].value;
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(Tensor::full(lv.dims(), 1.0));

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, data: Vec<f64>| {
            let dims = self.nodes[v.index].value.dims();
            match &mut grads[v.index] {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(data) {
                        *a += b;
                    }
                }
                slot => *slot = Some(Tensor::from_parts(dims.to_vec(), data)),
            }
        };
        let val = |v: Var| &self.nodes[v.index].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let g_geom = ConvGeom::new(val(*x), val(*w)).expect("validated in forward");
                if self.wants(*x) {
                    acc(*x, ops::conv2d_backward_input(&g_geom, g.data(), val(*w).data()));
                }
                let want_b = b.is_some_and(|b| self.wants(b));
                if self.wants(*w) || want_b {
                    let (gw, gb) = ops::conv2d_backward_params(&g_geom, g.data(), val(*x).data());
                    if self.wants(*w) {
                        acc(*w, gw);
                    }
                    if let Some(b) = b.filter(|_| want_b) {
                        acc(b, gb);
                    }
                }
            }
            Op::Relu(x) => {
                let d = val(*x).data().iter().zip(g.data()).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect();
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = node.value.data().iter().zip(g.data()).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                acc(*x, d);
            }
            Op::Neg(x) => acc(*x, g.data().iter().map(|v| -v).collect()),
            Op::Scale(x, s) => acc(*x, g.data().iter().map(|v| v * s).collect()),
            Op::Add(xs) => {
                for &x in xs {
                    if self.wants(x) {
                        acc(x, g.data().to_vec());
                    }
                }
            }
            Op::ScaledSoftmax { x, alpha, beta } => {
                let (c, h, w) = node.value.chw().expect("validated in forward");
                acc(*x, ops::scaled_softmax_backward(node.value.data(), g.data(), c, h * w, *alpha, *beta));
            }
            Op::AvgPool { x, k } => {
                let (c, h, w) = val(*x).chw().expect("validated in forward");
                acc(*x, ops::avg_pool_backward(g.data(), c, h, w, *k));
            }
            Op::SumAll(x) => {
                let n = val(*x).len();
                acc(*x, vec![g.data()[0]; n]);
            }
            Op::SpatialNll { logits, target } => {
                let l = val(*logits).data();
                let lse = ops::log_sum_exp(l);
                let scale = g.data()[0];
                let mut d: Vec<f64> = l.iter().map(|&v| scale * (v - lse).exp()).collect();
                d[*target] -= scale;
                acc(*logits, d);
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `like`'s shape when the loss ignores it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.dims()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.var(Tensor::new(vec![2, 3], vec![1., -2., 3., 0.5, 7., -1.]).unwrap());
        let loss = t.sum_all(x).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.var(Tensor::zeros(&[4]));
        let s = t.sigmoid(x).unwrap();
        let loss = t.sum_all(s).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn reused_variable_accumulates() {
        let mut t = Tape::new();
        let x = t.var(Tensor::full(&[3], 2.0));
        let y = t.add(&[x, x, x]).unwrap();
        let loss = t.sum_all(y).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn loss_must_be_scalar() {
        let mut t = Tape::new();
        let x = t.var(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn foreign_loss_rejected() {
        let mut a = Tape::new();
        let b = Tape::new();
        let x = a.var(Tensor::zeros(&[1]));
        let loss = a.sum_all(x).unwrap();
        assert!(matches!(b.backward(loss), Err(Error::NotOnTape(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::full(&[2], 1.0));
        let x = t.var(Tensor::full(&[2], 3.0));
        let y = t.add(&[c, x]).unwrap();
        let loss = t.sum_all(y).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn non_finite_outputs_rejected() {
        let mut t = Tape::new();
        let x = t.var(Tensor::full(&[1], 1e308));
        assert!(matches!(t.scale(x, 10.0), Err(Error::NonFinite(_))));
    }
}
