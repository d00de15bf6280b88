use super::{Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..n {
                let e = (src[at(k)] - max).exp();
                out[at(k)] = e;
                total = total + e;
            }
            for k in 0..n {
                out[at(k)] = out[at(k)] / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = split_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut dx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let dot: T = (0..n).map(|k| yd[at(k)] * gd[at(k)]).sum();
            for k in 0..n {
                dx[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), dx).unwrap()
}

pub(crate) fn sum_per_sample_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let b = x.shape()[0];
    let inner = x.numel() / b.max(1);
    Tensor::from_fn(x.shape().to_vec(), |i| g.data()[i / inner])
}

pub(crate) fn concat_backward<T: Real>(tape: &Tape<T>, parts: &[Var], axis: usize, g: &Tensor<T>) -> Vec<Tensor<T>> {
    let (outer, total, inner) = split_axis(g.shape(), axis);
    let mut offset = 0;
    parts
        .iter()
        .map(|&p| {
            let shape = tape.shape(p).to_vec();
            let n = shape[axis];
            let mut d = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                let base = (o * total + offset) * inner;
                d.extend_from_slice(&g.data()[base..base + n * inner]);
            }
            offset += n;
            Tensor::new(shape, d).unwrap()
        })
        .collect()
}

pub(crate) fn narrow_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>, axis: usize, start: usize) -> Tensor<T> {
    let (outer, total, inner) = split_axis(x.shape(), axis);
    let len = g.shape()[axis];
    let mut d = Tensor::zeros(x.shape().to_vec());
    let dd = d.data_mut();
    for o in 0..outer {
        let dst = (o * total + start) * inner;
        let src = o * len * inner;
        dd[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
    }
    d
}

impl<T: Real> Tape<T> {
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis >= self.shape(x).len() {
            return Err(shape_err(format!("softmax axis {axis} invalid for shape {:?}", self.shape(x))));
        }
        let value = softmax_forward(self.value(x), axis);
        Ok(self.derive(value, Op::Softmax { x, axis }, &[x]))
    }

    /// Sums everything but the leading axis: `[B, ...] -> [B]`.
    pub fn sum_per_sample(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let Some(&b) = t.shape().first() else {
            return Err(shape_err("sum_per_sample needs at least one axis"));
        };
        let inner = t.numel() / b.max(1);
        let data = (0..b).map(|i| t.data()[i * inner..(i + 1) * inner].iter().copied().sum()).collect();
        let value = Tensor::new(vec![b], data)?;
        Ok(self.derive(value, Op::SumPerSample(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.derive(value, Op::Reshape(x), &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} invalid for shape {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err(format!("concat: {s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let n = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * n..(o + 1) * n]);
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.derive(value, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err(format!("narrow {start}+{len} on axis {axis} of {shape:?}")));
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.derive(value, Op::Narrow { x, axis, start }, &[x]))
    }
}
