use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Mode, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Forward-pass context: the tape being recorded, the parameters it reads
/// and the batch-norm mode.
pub struct Ctx<'s, T> {
    pub tape: Tape<T>,
    pub store: &'s ParamStore<T>,
    pub mode: Mode,
}

impl<'s, T: Real> Ctx<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Ctx { tape: Tape::new(), store, mode }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }
}

fn normal_init<T: Real, R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

fn uniform_init<T: Real, R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Kaiming-normal weights (fan-in), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let w = normal_init(vec![out_channels, in_channels, kernel, kernel], (2.0 / fan_in).sqrt(), rng);
        let weight = store.add(format!("{name}.weight"), w, true)?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels]), true)?) } else { None };
        Ok(Conv2d { weight, bias, in_channels, out_channels, kernel, stride: 1, pad })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        cx.tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.add(format!("{name}.weight"), Tensor::full(vec![channels], T::one()), true)?,
            beta: store.add(format!("{name}.bias"), Tensor::zeros(vec![channels]), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(vec![channels]), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::full(vec![channels], T::one()), false)?,
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        })
    }

    /// Train mode normalizes with batch statistics and records the momentum
    /// update of the running statistics on the tape (unbiased variance).
    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = cx.param(self.gamma);
        let beta = cx.param(self.beta);
        match cx.mode {
            Mode::Train => {
                let (y, stats) = cx.tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = T::of(self.momentum);
                let keep = T::one() - m;
                let n = stats.count as f64;
                let unbias = T::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
                let rm = &cx.store.get(self.running_mean).value;
                let rv = &cx.store.get(self.running_var).value;
                let new_mean = Tensor::from_fn(vec![rm.numel()], |c| keep * rm.data()[c] + m * stats.mean.data()[c]);
                let new_var =
                    Tensor::from_fn(vec![rv.numel()], |c| keep * rv.data()[c] + m * stats.var.data()[c] * unbias);
                cx.tape.record_running_update(self.running_mean, new_mean);
                cx.tape.record_running_update(self.running_var, new_var);
                Ok(y)
            }
            Mode::Eval => {
                let mean = &cx.store.get(self.running_mean).value;
                let var = &cx.store.get(self.running_var).value;
                cx.tape.batch_norm_eval(x, gamma, beta, mean, var, self.eps)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    /// Uniform `±1/sqrt(fan_in)` weights, zero bias.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = uniform_init(vec![out_features, in_features], bound, rng);
        let weight = store.add(format!("{name}.weight"), w, true)?;
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![out_features]), true)?);
        Ok(Linear { weight, bias, in_features, out_features })
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        cx.tape.fully_connected(x, w, b)
    }
}
