//! Named parameter collections and plain SGD.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{ConvKernel, Tensor};

/// Named tensors, iterated in sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

/// Gradients keyed like [`ModelParams`].
pub type ParamGrads = BTreeMap<String, Tensor>;

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Stores `kernel` as `<prefix>/w` and, when present, `<prefix>/b`.
    pub fn insert_kernel(&mut self, prefix: &str, kernel: ConvKernel) {
        self.insert(format!("{prefix}/w"), kernel.weight);
        if let Some(b) = kernel.bias {
            self.insert(format!("{prefix}/b"), b);
        }
    }

    pub fn kernel(&self, prefix: &str) -> Result<ConvKernel> {
        let w = self
            .get(&format!("{prefix}/w"))
            .ok_or_else(|| Error::Incompatible(format!("missing parameter {prefix}/w")))?;
        ConvKernel::new(w.clone(), self.get(&format!("{prefix}/b")).cloned())
    }

    /// Registers every tensor on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams { vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.var(v.clone()))).collect() }
    }

    /// Registers every tensor as a constant, for gradient-free evaluation.
    pub fn bind_constant(&self, tape: &mut Tape) -> BoundParams {
        BoundParams { vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.constant(v.clone()))).collect() }
    }
}

/// Tape handles for a [`ModelParams`] set.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

/// Weight and optional bias handles of one convolution.
#[derive(Clone, Copy, Debug)]
pub struct KernelVars {
    pub w: Var,
    pub b: Option<Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Incompatible(format!("missing parameter {name}")))
    }

    pub fn kernel(&self, prefix: &str) -> Result<KernelVars> {
        Ok(KernelVars { w: self.var(&format!("{prefix}/w"))?, b: self.vars.get(&format!("{prefix}/b")).copied() })
    }

    /// Collects gradients by parameter name, zero-filled where the loss ignores a parameter.
    pub fn grads(&self, g: &Gradients, params: &ModelParams) -> ParamGrads {
        self.vars
            .iter()
            .map(|(k, &v)| (k.clone(), g.get_or_zeros(v, params.get(k).expect("bound from these params"))))
            .collect()
    }
}

fn check_shapes(params: &ModelParams, grads: &ParamGrads) -> Result<()> {
    for (name, g) in grads {
        match params.get(name) {
            Some(p) if p.same_shape(g) => {}
            Some(p) => return Err(Error::Shape(format!("{name}: param {:?} vs grad {:?}", p.dims(), g.dims()))),
            None => return Err(Error::Shape(format!("gradient for unknown parameter {name}"))),
        }
    }
    Ok(())
}

/// `p <- p - lr * g` for every parameter named in `grads`.
pub fn sgd_step(params: &mut ModelParams, grads: &ParamGrads, lr: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (name, g) in grads {
        params.get_mut(name).expect("checked").add_scaled(g, -lr)?;
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum (off when `momentum == 0`).
/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.values().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(params, grads, self.lr);
        }
        check_shapes(params, grads)?;
        for (name, g) in grads {
            let v = self.velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.dims()));
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = self.momentum * *vv + gv;
            }
            params.get_mut(name).expect("checked").add_scaled(v, -self.lr)?;
        }
        Ok(())
    }
}
