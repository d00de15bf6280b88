//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every operation appends a node holding its forward value. Parents are
//! always created before children, so walking the tape from the loss back to
//! index 0 is a topological order whose ties are broken by creation index;
//! gradient accumulation is therefore deterministic.

mod conv;
mod gradcheck;
mod norm;
mod params;
mod pointwise;
mod spatial;
mod structural;

pub use gradcheck::{check_gradients, check_param_gradients, relative_error};
pub use params::{ParamId, ParamStore, Parameter};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Log(Var),
    Pow(Var, T),
    Clamp(Var, T, T),
    Relu(Var),
    Sigmoid(Var),
    Softmax { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    AvgPool2(Var),
    Upsample2(Var),
    GlobalAvgPool(Var),
    ChannelScale { x: Var, s: Var },
    WindowFilter { x: Var, taps: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<(ParamId, Var)>,
    running_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), param_vars: Vec::new(), running_updates: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn ops(&self) -> impl Iterator<Item = (Var, &Op<T>)> {
        self.nodes.iter().enumerate().map(|(i, n)| (Var(i), &n.op))
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Pushes a node whose gradient requirement is inherited from `parents`.
    pub(crate) fn derive(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// A differentiable leaf (gradient is reported by [`Tape::backward`]).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        self.param_vars.push((id, v));
        v
    }

    pub(crate) fn record_running_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.running_updates.push((id, value));
    }

    pub fn take_running_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.running_updates)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Input | Op::Param(_));
            if is_leaf {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        store.accumulate(self, &grads);
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let out = &self.nodes[i].value;
        let mut acc = |v: Var, contrib: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    acc(*a, pointwise::zip_with(g, bv, |g, b| g * b));
                }
                if self.requires_grad(*b) {
                    acc(*b, pointwise::zip_with(g, av, |g, a| g * a));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    acc(*a, pointwise::zip_with(g, bv, |g, b| g / b));
                }
                if self.requires_grad(*b) {
                    let d = pointwise::zip3_with(g, av, bv, |g, a, b| -g * a / (b * b));
                    acc(*b, d);
                }
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * *s)),
            Op::Offset(x) => acc(*x, g.clone()),
            Op::Log(x) => acc(*x, pointwise::zip_with(g, self.value(*x), |g, x| g / x)),
            Op::Pow(x, p) => {
                let p = *p;
                let d = pointwise::zip_with(g, self.value(*x), |g, x| g * p * x.powf(p - T::one()));
                acc(*x, d);
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = pointwise::zip_with(g, self.value(*x), |g, x| {
                    if x >= lo && x <= hi {
                        g
                    } else {
                        T::zero()
                    }
                });
                acc(*x, d);
            }
            Op::Relu(x) => {
                let d = pointwise::zip_with(g, self.value(*x), |g, x| if x > T::zero() { g } else { T::zero() });
                acc(*x, d);
            }
            Op::Sigmoid(x) => acc(*x, pointwise::zip_with(g, out, |g, y| g * y * (T::one() - y))),
            Op::Softmax { x, axis } => acc(*x, structural::softmax_backward(out, g, *axis)),
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x).to_vec(), g.item())),
            Op::Mean(x) => {
                let n = T::of(self.value(*x).numel() as f64);
                acc(*x, Tensor::full(self.shape(*x).to_vec(), g.item() / n));
            }
            Op::SumPerSample(x) => acc(*x, structural::sum_per_sample_backward(self.value(*x), g)),
            Op::Reshape(x) => acc(*x, g.clone().reshape(self.shape(*x).to_vec())?),
            Op::Concat { parts, axis } => {
                for (p, d) in parts.iter().zip(structural::concat_backward(self, parts, *axis, g)) {
                    acc(*p, d);
                }
            }
            Op::Narrow { x, axis, start } => {
                acc(*x, structural::narrow_backward(self.value(*x), g, *axis, *start));
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let need_x = self.requires_grad(*x);
                let grads_c = conv::conv2d_backward(self.value(*x), self.value(*w), *stride, *pad, g, need_x);
                if let Some(dx) = grads_c.dx {
                    acc(*x, dx);
                }
                acc(*w, grads_c.dw);
                if let Some(b) = b {
                    acc(*b, grads_c.db);
                }
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = conv::linear_backward(self.value(*x), self.value(*w), g);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let (dx, dgamma, dbeta) =
                    norm::batch_norm_backward(self.value(*gamma), xhat, inv_std, *batch_stats, g);
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::MaxPool2 { x, argmax } => acc(*x, spatial::max_pool2_backward(self.value(*x), argmax, g)),
            Op::AvgPool2(x) => acc(*x, spatial::avg_pool2_backward(self.value(*x), g)),
            Op::Upsample2(x) => acc(*x, spatial::upsample2_backward(self.value(*x), g)),
            Op::GlobalAvgPool(x) => acc(*x, spatial::global_avg_pool_backward(self.value(*x), g)),
            Op::ChannelScale { x, s } => {
                let (dx, ds) = spatial::channel_scale_backward(self.value(*x), self.value(*s), g);
                acc(*x, dx);
                acc(*s, ds);
            }
            Op::WindowFilter { x, taps } => acc(*x, spatial::window_filter_backward(self.value(*x), taps, g)),
        }
        Ok(())
    }
}

pub(crate) fn same_shape<T: Real>(tape: &Tape<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Shape(format!(
            "{what}: operand shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}
