use super::{same_shape, Op, Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub(crate) fn zip_with<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_with preserves shape")
}

pub(crate) fn zip3_with<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    f: impl Fn(T, T, T) -> T,
) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip3_with preserves shape")
}

impl<T: Real> Tape<T> {
    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(self, a, b, what)?;
        let value = zip_with(self.value(a), self.value(b), f);
        Ok(self.derive(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        let value = self.value(x).map(|v| v * s);
        self.derive(value, Op::Scale(x, s), &[x])
    }

    /// `x + c` for a constant scalar `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let value = self.value(x).map(|v| v + c);
        self.derive(value, Op::Offset(x), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.ln());
        self.derive(value, Op::Log(x), &[x])
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let p = T::of(p);
        let value = self.value(x).map(|v| v.powf(p));
        self.derive(value, Op::Pow(x, p), &[x])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        self.derive(value, Op::Clamp(x, lo, hi), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.derive(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.derive(value, Op::Sigmoid(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.derive(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / T::of(t.numel() as f64));
        self.derive(value, Op::Mean(x), &[x])
    }
}
